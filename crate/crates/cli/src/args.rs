use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "structconv", version, about = "Structured convolutions over grids, graphs and attention")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every randomly generated instance.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Overrides the floating-point tolerances of `verify` and `bench`.
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    /// Encoding of tensor files written by the command.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Binary,
}

impl From<FormatArg> for structconv::TensorFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => structconv::TensorFormat::Json,
            FormatArg::Binary => structconv::TensorFormat::Binary,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a basis stack and write it as JSON.
    Basis(BasisArgs),
    /// Apply or compose convolutions.
    Conv(ConvArgs),
    /// Evaluate attention convolutions.
    Attn(AttnArgs),
    /// Print the cost of each contraction path.
    Plan(PlanArgs),
    /// Run the randomised property suite, or validate a basis file.
    Verify(VerifyArgs),
    /// Time the contraction paths over a grid of sizes.
    Bench(BenchArgs),
    /// Write seeded random tensors, bases or graphs.
    Random(RandomArgs),
    /// Read any supported file and write it back in canonical form.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisKind {
    Grid,
    Identity,
    Gcn,
    Chebyshev,
    Walk,
    Sorts,
    ShiftHeads,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    #[arg(value_enum)]
    pub kind: BasisKind,

    /// Grid dimensions (grid, shift-heads).
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,

    /// Kernel size per grid dimension.
    #[arg(long, value_delimiter = ',')]
    pub kernel: Option<Vec<usize>>,

    /// Kernel strides; default 1.
    #[arg(long, value_delimiter = ',')]
    pub strides: Option<Vec<usize>>,

    /// Kernel offsets ε; default centres the kernel.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub offsets: Option<Vec<i64>>,

    /// Keep every f-th output node per dimension (grid).
    #[arg(long, value_delimiter = ',')]
    pub subsample: Option<Vec<usize>>,

    /// Size of the identity basis.
    #[arg(long)]
    pub n: Option<usize>,

    /// Graph file with lines `u v w [label]`.
    #[arg(long)]
    pub graph: Option<PathBuf>,

    /// Node count; default is the largest id in the graph file.
    #[arg(long)]
    pub nodes: Option<usize>,

    /// Chebyshev order or walk length K.
    #[arg(long)]
    pub order: Option<usize>,

    /// Relation sorts, one per line (sorts).
    #[arg(long)]
    pub sorts_file: Option<PathBuf>,

    /// Use I − D^{-1/2} A D^{-1/2} instead of the renormalised adjacency (gcn).
    #[arg(long)]
    pub laplacian: bool,

    /// Relative positions, one head each (shift-heads).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub shifts: Option<Vec<i64>>,

    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvArgs {
    #[command(subcommand)]
    pub action: ConvAction,
}

#[derive(Debug, Subcommand)]
pub enum ConvAction {
    /// y = Σ_k A_kᵀ x Θ_k; a `⟨B,M,P⟩` input is treated as a batch.
    Apply {
        #[arg(long)]
        basis: PathBuf,
        /// Dense `⟨K,P,Q⟩` tensor or a reduced-parameter JSON file.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// green, blue, red or auto.
        #[arg(long, default_value = "auto")]
        path: String,
    },
    /// Fuse two convolutions into one.
    Compose {
        #[arg(long)]
        basis1: PathBuf,
        #[arg(long)]
        params1: PathBuf,
        #[arg(long)]
        basis2: PathBuf,
        #[arg(long)]
        params2: PathBuf,
        #[arg(long)]
        out_basis: PathBuf,
        #[arg(long)]
        out_params: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[command(subcommand)]
    pub action: AttnAction,
}

#[derive(Debug, Subcommand)]
pub enum AttnAction {
    /// Evaluate the heads and convolve.
    Apply {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// x′ for general wiring.
        #[arg(long)]
        x_aux: Option<PathBuf>,
        /// y′ for general and cross wiring.
        #[arg(long)]
        y_aux: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Also write the computed heads as a basis file.
        #[arg(long)]
        dump_heads: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Take M, N, K and nnz from a basis file.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long, short = 'b', default_value_t = 1)]
    pub batch: usize,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub nnz: Option<usize>,
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub q: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Property names or groups to run.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,

    /// Validate a basis file instead of running the suite.
    #[arg(long)]
    pub basis: Option<PathBuf>,

    /// List the properties and their groups.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchKind {
    /// 1-D grid convolution with `--kernel` taps.
    Grid,
    /// K = 1 identity basis.
    Identity,
    /// K random matrices with `--density`.
    Random,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = BenchKind::Grid)]
    pub kind: BenchKind,

    /// Node counts M (= N) to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 256, 1024])]
    pub sizes: Vec<usize>,

    /// Batch sizes to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 8])]
    pub batch: Vec<usize>,

    #[arg(long, short = 'p', default_value_t = 8)]
    pub channels: usize,

    #[arg(long, short = 'q', default_value_t = 8)]
    pub out_channels: usize,

    /// Kernel size (grid) or K (random).
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,

    #[arg(long, default_value_t = 0.05)]
    pub density: f64,

    /// Timed runs per path; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct RandomArgs {
    #[command(subcommand)]
    pub what: RandomWhat,
}

#[derive(Debug, Subcommand)]
pub enum RandomWhat {
    /// Tensor with uniform entries in [−1, 1].
    Tensor {
        #[arg(long, value_delimiter = ',')]
        shape: Vec<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// K sparse M×N matrices.
    Basis {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        density: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Directed graph with weights in [0, 1).
    Graph {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0.3)]
        density: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}
