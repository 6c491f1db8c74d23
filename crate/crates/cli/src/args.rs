use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nij_core::Tolerances;

#[derive(Debug, Parser)]
#[command(name = "nij-toolkit", version, about = "Nijenhuis tensors and invariants of almost complex structures")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    #[arg(long, global = true, value_name = "TOL", allow_negative_numbers = true)]
    pub tol_alg: Option<f64>,
    #[arg(long, global = true, value_name = "TOL", allow_negative_numbers = true)]
    pub tol_rank: Option<f64>,
    #[arg(long, global = true, value_name = "TOL", allow_negative_numbers = true)]
    pub tol_field: Option<f64>,
    #[arg(long, global = true, value_name = "TOL", allow_negative_numbers = true)]
    pub tol_frame: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of random sample points (or sampler restarts for `quadric`).
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

impl Global {
    pub fn tolerances(&self) -> Result<Tolerances, String> {
        let mut t = Tolerances::default();
        for (name, value, slot) in [
            ("--tol-alg", self.tol_alg, &mut t.alg),
            ("--tol-rank", self.tol_rank, &mut t.rank),
            ("--tol-field", self.tol_field, &mut t.field),
            ("--tol-frame", self.tol_frame, &mut t.frame),
        ] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(format!("{name} must be a positive number, got {v}"));
                }
                *slot = v;
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Args)]
pub struct PointArg {
    /// Comma-separated coordinates of the evaluation point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    /// Evaluate at cell centers of a grid with this many points per axis.
    #[arg(long, conflicts_with = "samples")]
    pub grid: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a structure file and test integrability on sample points.
    Check {
        structure: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Nijenhuis tensor at a point, with the finite-difference oracle.
    Nijenhuis {
        structure: PathBuf,
        #[command(flatten)]
        point: PointArg,
    },
    /// Degeneracy class, image and kernel of the Nijenhuis tensor at a point.
    Classify {
        structure: PathBuf,
        #[command(flatten)]
        point: PointArg,
    },
    /// The invariant 2-form and its quadric at a point.
    Bryant {
        structure: PathBuf,
        #[command(flatten)]
        point: PointArg,
    },
    /// Canonical frame and structure functions of a 4-dimensional structure.
    Frame4 {
        structure: PathBuf,
        #[command(flatten)]
        point: PointArg,
        #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
        sign: i32,
        /// Relative finite-difference step of the frame stencil.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Complex structure of R^4 determined by a web of four planes.
    Web { planes: PathBuf },
    /// Generate example structures or verify the pencil hypotheses.
    Pencil {
        #[command(subcommand)]
        mode: PencilMode,
    },
    /// Quadric fitting and invariant complex planes.
    Quadric {
        #[command(subcommand)]
        mode: QuadricMode,
    },
    /// Jet and structure fiber ranks and invariant-count bounds.
    Jetcount {
        #[arg(long)]
        n: u64,
    },
    /// Degeneracy histogram and largest Nijenhuis norm over sample points.
    Scan {
        structure: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Example {
    /// Three 2x2 blocks depending on all coordinates.
    One,
    /// A 2x2 block and a 4x4 block on complementary coordinates.
    Two,
    /// Degenerate example with kernel equal to the first coordinate plane.
    Dg2Kernel,
    /// Degenerate example with kernel transversal to the first coordinate plane.
    Dg2Transversal,
}

#[derive(Debug, Subcommand)]
pub enum PencilMode {
    /// Write a seeded example structure as a structure file.
    Generate {
        #[arg(long, value_enum)]
        example: Example,
        #[arg(long, default_value_t = 4)]
        degree: u32,
        /// Upper block-triangular variant of example two.
        #[arg(long)]
        triangular: bool,
        /// Also write the bare structure file, readable by the other commands.
        #[arg(long, value_name = "PATH")]
        structure_out: Option<PathBuf>,
    },
    /// Check the pencil hypotheses along a coordinate 2-plane.
    Verify {
        structure: PathBuf,
        /// Coordinate indices spanning the leaf plane.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1])]
        leaf: Vec<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum QuadricMode {
    /// Fit a real quadric through chart points.
    Fit { points: PathBuf },
    /// Whether chart points lie on no real quadric.
    Nondegeneracy { points: PathBuf },
    /// Sample complex 2-planes invariant under the Nijenhuis tensor at a point.
    InvariantPlanes {
        structure: PathBuf,
        #[command(flatten)]
        point: PointArg,
    },
    /// Verdict on invariant planes: sampled, or read from a points file.
    Certificate {
        structure: PathBuf,
        #[command(flatten)]
        point: PointArg,
        #[arg(long)]
        planes: Option<PathBuf>,
    },
}
