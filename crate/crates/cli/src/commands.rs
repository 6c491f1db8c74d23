use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::{json, Value};

use nij_core::dim4::{canonical_frame_with, maurer_cartan_with, FrameOptions};
use nij_core::field::{self, integrability_scan, nijenhuis_at, nijenhuis_fd, ChartedStructure, JField, Sampling};
use nij_core::jetcount::invariant_count_bound;
use nij_core::model::{self, bryant_form, degeneracy_class, matrix_rows, omega_degenerate, quadric_form, NTensor};
use nij_core::pencils::{self, verify_product_pencil};
use nij_core::quadrics::{self, GrChartPoint, SamplerOptions};
use nij_core::webs::{self, PlaneWeb4};
use nij_core::{Error, Tolerances};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{Command, Example, Global, PencilMode, QuadricMode, SamplingArgs};
use crate::report::{float, Inputs};

/// Why a run did not produce an ok result.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, unreadable or malformed input: exit 1.
    Usage(String),
    /// A library error; input errors exit 1, mathematical ones exit 2.
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    pub fn code(&self) -> &str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Core(e) => e.code(),
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }

    /// Library errors describing the input rather than the mathematics.
    pub fn is_input_error(&self) -> bool {
        match self {
            Failure::Usage(_) => true,
            Failure::Core(e) => matches!(
                e,
                Error::Parse(_) | Error::Argument(_) | Error::Dimension(_) | Error::Domain { .. } | Error::InvalidStructure { .. }
            ),
        }
    }
}

/// The result payload and whether its verdict passed.
pub struct Outcome {
    pub result: Value,
    pub passed: bool,
}

impl Outcome {
    fn ok(result: Value) -> Self {
        Outcome { result, passed: true }
    }
}

pub const DEFAULT_SAMPLES: usize = 500;
pub const DEFAULT_PENCIL_POINTS: usize = 20;

pub fn run(command: &Command, g: &Global, tol: &Tolerances, inputs: &mut Inputs) -> Result<Outcome, Failure> {
    match command {
        Command::Check { structure, sampling } => {
            let s = load_structure(structure, tol, inputs)?;
            let report = integrability_scan(&s, sampling_of(sampling, g), tol)?;
            let verdict = if report.integrable { "integrable" } else { "non-integrable" };
            Ok(Outcome {
                result: json!({
                    "dim": s.dim(),
                    "degree": s.degree(),
                    "points": report.points,
                    "max_norm": float(report.max_norm),
                    "argmax": report.argmax,
                    "histogram": report.histogram,
                    "unreliable": report.unreliable,
                    "verdict": verdict,
                }),
                passed: report.integrable,
            })
        }
        Command::Scan { structure, sampling } => {
            let s = load_structure(structure, tol, inputs)?;
            let report = integrability_scan(&s, sampling_of(sampling, g), tol)?;
            Ok(Outcome::ok(serde_json::to_value(&report).expect("scan report serializes")))
        }
        Command::Nijenhuis { structure, point } => {
            let s = load_structure(structure, tol, inputs)?;
            let n = nijenhuis_at(&s, &point.point, tol.field)?;
            let h = 1e-4 * s.domain().size();
            let oracle = nijenhuis_fd(&s, &point.point, h, tol.field)?;
            let m = n.dim();
            let mut diff: f64 = 0.0;
            for k in 0..m {
                for i in 0..m {
                    for j in 0..m {
                        diff = diff.max((n.get(k, i, j) - oracle.get(k, i, j)).abs());
                    }
                }
            }
            let ids = n.identity_residuals();
            let identities_ok = model::n_identities_check(&n, tol.alg);
            Ok(Outcome {
                result: json!({
                    "point": point.point,
                    "j": s.j_at(&point.point).row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
                    "tensor": tensor_json(&n),
                    "max_abs": float(n.max_abs()),
                    "identity_residuals": ids,
                    "identities_ok": identities_ok,
                    "oracle_step": h,
                    "oracle_max_difference": float(diff),
                }),
                passed: identities_ok,
            })
        }
        Command::Classify { structure, point } => {
            let s = load_structure(structure, tol, inputs)?;
            let n = nijenhuis_at(&s, &point.point, tol.field)?;
            let class = degeneracy_class(&n, tol);
            let mut result = serde_json::to_value(&class).expect("class serializes");
            result["point"] = json!(point.point);
            Ok(Outcome::ok(result))
        }
        Command::Bryant { structure, point } => {
            let s = load_structure(structure, tol, inputs)?;
            let n = nijenhuis_at(&s, &point.point, tol.field)?;
            let omega = bryant_form(&n);
            let (degenerate, kernel) = omega_degenerate(&omega, tol);
            Ok(Outcome::ok(json!({
                "point": point.point,
                "omega": matrix_rows(&omega),
                "quadric": matrix_rows(&quadric_form(&n)),
                "degenerate": degenerate,
                "kernel": columns(&kernel),
            })))
        }
        Command::Frame4 { structure, point, sign, step } => {
            let s = load_structure(structure, tol, inputs)?;
            let mut opts = FrameOptions::default();
            if let Some(h) = step {
                if !(*h > 0.0) {
                    return Err(Failure::Usage(format!("--step must be positive, got {h}")));
                }
                opts.step = *h;
            }
            let frame = canonical_frame_with(&s, &point.point, *sign, tol, &opts)?;
            let sf = maurer_cartan_with(&s, &point.point, tol, &opts)?;
            let passed = frame.check(tol) && sf.max_pinned_residual() <= tol.frame;
            let table: Vec<Value> = nij_core::dim4::PAIRS
                .iter()
                .zip(&sf.coefficients)
                .zip(&sf.parity)
                .map(|((&(i, j), c), p)| json!({ "pair": [i + 1, j + 1], "coefficients": c, "flip_parity": p }))
                .collect();
            Ok(Outcome {
                result: json!({
                    "frame": frame,
                    "structure_functions": table,
                    "pinned_residuals": sf.pinned,
                    "max_pinned_residual": sf.max_pinned_residual(),
                    "frame_ok": passed,
                    "step": opts.step,
                }),
                passed,
            })
        }
        Command::Web { planes } => {
            let text = inputs.read(planes).map_err(Failure::Usage)?;
            let web = PlaneWeb4::from_json_str(&text)?;
            let sol = webs::web_to_j(&web)?;
            let ok = webs::verify_web(&sol.j, &web, tol.alg) && webs::verify_web(&sol.negated, &web, tol.alg);
            Ok(Outcome {
                result: json!({
                    "j": sol.j,
                    "negated": sol.negated,
                    "composite": sol.composite,
                    "lambda": sol.lambda,
                    "beta": sol.beta,
                    "invariance_residual": float(webs::invariance_residual(&sol.j, &web)),
                    "verified": ok,
                }),
                passed: ok,
            })
        }
        Command::Pencil { mode } => pencil(mode, g, tol, inputs),
        Command::Quadric { mode } => quadric(mode, g, tol, inputs),
        Command::Jetcount { n } => {
            let table = invariant_count_bound(*n)?;
            eprintln!("{table}");
            Ok(Outcome::ok(serde_json::to_value(&table).expect("table serializes")))
        }
    }
}

fn load_structure(path: &Path, tol: &Tolerances, inputs: &mut Inputs) -> Result<ChartedStructure, Failure> {
    let text = inputs.read(path).map_err(Failure::Usage)?;
    Ok(ChartedStructure::from_json_str(&text, tol.field)?)
}

fn sampling_of(args: &SamplingArgs, g: &Global) -> Sampling {
    match args.grid {
        Some(per_axis) => Sampling::Grid { per_axis },
        None => Sampling::Random { count: g.samples.unwrap_or(DEFAULT_SAMPLES), seed: g.seed },
    }
}

fn tensor_json(n: &NTensor) -> Value {
    let m = n.dim();
    json!((0..m).map(|k| (0..m).map(|i| (0..m).map(|j| n.get(k, i, j)).collect::<Vec<_>>()).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn pencil(mode: &PencilMode, g: &Global, tol: &Tolerances, inputs: &mut Inputs) -> Result<Outcome, Failure> {
    match mode {
        PencilMode::Generate { example, degree, triangular, structure_out } => {
            if *triangular && *example != Example::Two {
                return Err(Failure::Usage("--triangular applies to example two only".into()));
            }
            let s = match example {
                Example::One => pencils::make_example1(g.seed, *degree)?,
                Example::Two => pencils::make_example2(g.seed, *degree, *triangular)?,
                Example::Dg2Kernel => pencils::make_dg2_kernel_v1(g.seed, *degree)?,
                Example::Dg2Transversal => pencils::make_dg2_transversal(g.seed, *degree)?,
            };
            let value = s.to_json_value();
            if let Some(path) = structure_out {
                let text = serde_json::to_string_pretty(&value).expect("structure serializes") + "\n";
                std::fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
            }
            Ok(Outcome::ok(json!({ "structure": value })))
        }
        PencilMode::Verify { structure, leaf } => {
            let s = load_structure(structure, tol, inputs)?;
            let v: [usize; 2] = leaf
                .as_slice()
                .try_into()
                .map_err(|_| Failure::Usage(format!("--leaf needs two coordinate indices, got {}", leaf.len())))?;
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            let pts = s.domain().scaled(0.9).random_points(g.samples.unwrap_or(DEFAULT_PENCIL_POINTS), &mut rng);
            let report = verify_product_pencil(&s, v, &pts, tol)?;
            Ok(Outcome { passed: report.is_pencil, result: serde_json::to_value(&report).expect("report serializes") })
        }
    }
}

#[derive(Deserialize)]
struct PointsFile {
    points: Vec<GrChartPoint>,
}

fn load_points(path: &Path, inputs: &mut Inputs) -> Result<Vec<GrChartPoint>, Failure> {
    let text = inputs.read(path).map_err(Failure::Usage)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: PointsFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            Failure::Core(Error::Parse(format!("malformed JSON at line {} column {}: {inner}", inner.line(), inner.column())))
        } else {
            Failure::Core(Error::Parse(format!("{path}: {inner}")))
        }
    })?;
    if let Some((i, p)) = file.points.iter().enumerate().find(|(_, p)| p.chart_index > 2) {
        return Err(Failure::Core(Error::Parse(format!("points[{i}].chart_index: {} is not 0, 1 or 2", p.chart_index))));
    }
    Ok(file.points)
}

fn quadric(mode: &QuadricMode, g: &Global, tol: &Tolerances, inputs: &mut Inputs) -> Result<Outcome, Failure> {
    match mode {
        QuadricMode::Fit { points } => {
            let pts = quadrics::to_common_chart(&load_points(points, inputs)?)?;
            let q = quadrics::quadric_through(&pts, tol)?;
            let residual = q.as_ref().map(|q| pts.iter().map(|p| q.eval(&p.coords).abs()).fold(0.0, f64::max));
            Ok(Outcome::ok(json!({
                "chart_index": pts.first().map(|p| p.chart_index),
                "points": pts.len(),
                "design_rank": quadrics::design_rank(&pts, tol)?,
                "quadric": q,
                "max_residual": residual,
            })))
        }
        QuadricMode::Nondegeneracy { points } => {
            let pts = quadrics::to_common_chart(&load_points(points, inputs)?)?;
            let nondegenerate = quadrics::quadratically_nondegenerate(&pts, tol)?;
            Ok(Outcome::ok(json!({
                "chart_index": pts.first().map(|p| p.chart_index),
                "points": pts.len(),
                "design_rank": quadrics::design_rank(&pts, tol)?,
                "nondegenerate": nondegenerate,
            })))
        }
        QuadricMode::InvariantPlanes { structure, point } => {
            let n = tensor_at(structure, &point.point, tol, inputs)?;
            let pts = quadrics::invariant_plane_sampler_with(&n, g.seed, tol, &sampler_options(g))?;
            let quadric_dim = if pts.is_empty() { None } else { Some(quadrics::quadric_space_dim(&quadrics::to_common_chart(&pts)?, tol)?) };
            Ok(Outcome::ok(json!({
                "class": degeneracy_class(&n, tol).tag,
                "planes": pts,
                "count": pts.len(),
                "quadric_space_dim": quadric_dim,
            })))
        }
        QuadricMode::Certificate { structure, point, planes } => {
            let n = tensor_at(structure, &point.point, tol, inputs)?;
            let pts = match planes {
                Some(p) => load_points(p, inputs)?,
                None => quadrics::invariant_plane_sampler_with(&n, g.seed, tol, &sampler_options(g))?,
            };
            let subspaces = pts.iter().map(|p| quadrics::chart_to_plane(p, n.structure())).collect::<Result<Vec<_>, _>>()?;
            let verdict = quadrics::invariant_plane_certificate(&n, &subspaces, tol)?;
            Ok(Outcome {
                result: json!({ "planes": pts.len(), "max_abs_n": float(n.max_abs()), "verdict": verdict }),
                passed: verdict != quadrics::Certificate::Contradiction,
            })
        }
    }
}

fn sampler_options(g: &Global) -> SamplerOptions {
    let mut opts = SamplerOptions::default();
    if let Some(k) = g.samples {
        opts.restarts = k;
    }
    opts
}

fn tensor_at(path: &Path, x: &[f64], tol: &Tolerances, inputs: &mut Inputs) -> Result<NTensor, Failure> {
    let s = load_structure(path, tol, inputs)?;
    Ok(field::nijenhuis_at(&s, x, tol.field)?)
}
