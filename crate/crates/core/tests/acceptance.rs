//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every tolerance and time limit is pinned
//! below.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ldb_core::denoiser::{Denoiser, DenoiserConfig};
use ldb_core::diffusion::{
    diffusion_loss, iterated_forward, linear_schedule, sample, sample_full, standard_normal, Denoise, DenoiserOutput,
    DiffusionError,
};
use ldb_core::geometry::{
    cartesian_to_internal, distance, internal_to_cartesian, topology_bond_graph, transform, TopologyTable, Vec3,
};
use ldb_core::metrics::{clash_score, gdr, ged_ratio, interaction_score};
use ldb_core::pipeline::{backmap, evaluate, prepare, train_diffusion, train_vqvae, BackmapOptions, EvaluationReport};
use ldb_core::protein_io::{
    build_bond_graph, coarse_grain, parse_pdb, AllAtomStructure, AtomRecord, BondGraph, Element, ResidueType,
    DEFAULT_BOND_TOLERANCE,
};
use ldb_core::tensor_nn::{AdaLayerNorm, Gradients, Linear, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use ldb_core::vqvae::{prepare_input, Quantizer, VqVae, VqvaeConfig, VqvaeSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const ROUNDTRIP_TOL: f64 = 1e-6;
const ROUNDTRIP_LIMIT: Duration = Duration::from_secs(1);
const INVARIANCE_TOL: f64 = 1e-9;
const RIGID_MOTIONS: usize = 100;
const INVARIANCE_LIMIT: Duration = Duration::from_secs(30);
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
/// Floor on the relative-error denominator `|analytic| + |numeric|`.
const FD_FLOOR: f64 = 1e-6;
const FD_INSTANCES: usize = 20;
const FD_LIMIT: Duration = Duration::from_secs(60);
const MARGINAL_DRAWS: usize = 10_000;
const MARGINAL_TIMES: [usize; 4] = [1, 10, 500, 1000];
const MARGINAL_SE: f64 = 3.0;
const MARGINAL_LIMIT: Duration = Duration::from_secs(60);
const METRIC_TOL: f64 = 1e-9;
const E2E_RMSD: f64 = 1.0;
const E2E_GED: f64 = 0.01;
const E2E_CLASH: f64 = 0.0;
const E2E_GDR: f64 = 1.0;
const E2E_SAMPLES: usize = 10;
const E2E_LIMIT: Duration = Duration::from_secs(30 * 60);

const FIXTURES: [&str; 6] = [
    "dipeptide",
    "tetrapeptide",
    "pep_mktayiakqr",
    "pep_cdefghilnp",
    "pep_wvstyrgqek",
    "pep_all20",
];
const TRAINING_PEPTIDES: [&str; 3] = ["pep_mktayiakqr", "pep_cdefghilnp", "pep_wvstyrgqek"];

type Outcome = Result<String, String>;

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(format!("{name}.pdb"))
}

fn fixture(name: &str) -> AllAtomStructure {
    parse_pdb(&std::fs::read_to_string(fixture_path(name)).unwrap(), true).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- 1

fn geometry_roundtrip() -> Outcome {
    let start = Instant::now();
    let topo = TopologyTable::standard();
    let mut covered = BTreeSet::new();
    let mut worst = 0.0f64;
    let mut atoms = 0;
    for name in FIXTURES {
        let s = fixture(name);
        ensure((2..=20).contains(&s.residue_count()), || {
            format!("{name}: {} residues", s.residue_count())
        })?;
        covered.extend(s.residues().iter().map(|r| r.residue_type));
        let cg = coarse_grain(&s).map_err(|e| e.to_string())?;
        let ic = cartesian_to_internal(&s, &cg, topo).map_err(|e| e.to_string())?;
        let rebuilt = internal_to_cartesian(&ic, &cg, topo).map_err(|e| e.to_string())?;
        ensure(rebuilt.atom_count() == s.atom_count(), || {
            format!("{name}: atom count changed")
        })?;
        for r in 0..s.residue_count() {
            for atom in s.residue_atoms(r) {
                let j = rebuilt
                    .find_atom(r, &atom.atom_name)
                    .ok_or_else(|| format!("{name}: residue {r} lost {}", atom.atom_name))?;
                let p = rebuilt.atoms()[j].position;
                if atom.atom_name == "CA" {
                    ensure(p == atom.position, || format!("{name}: CA {r} moved"))?;
                }
                worst = worst.max(distance(p, atom.position));
                atoms += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(covered.len() == ResidueType::ALL.len(), || {
        format!("only {} amino acids covered", covered.len())
    })?;
    ensure(worst < ROUNDTRIP_TOL, || format!("max error {worst:.3e} Å"))?;
    within(elapsed, ROUNDTRIP_LIMIT)?;
    Ok(format!(
        "{} fixtures, {atoms} atoms, 20/20 amino acids, max error {worst:.2e} Å, Cα exact, {elapsed:.2?}",
        FIXTURES.len()
    ))
}

// ---------------------------------------------------------------- 2

fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| standard_normal(rng));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn jitter(s: &AllAtomStructure, amount: f64, seed: u64) -> AllAtomStructure {
    if amount == 0.0 {
        return s.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    s.map_positions(|p| p.map(|x| x + rng.random_range(-amount..amount)))
}

struct Observed {
    latent: Vec<f64>,
    indices: Vec<usize>,
    eps: Vec<f64>,
    v: Vec<f64>,
    scores: Vec<f64>,
}

fn observe(
    vqvae: &VqVae,
    denoiser: &Denoiser,
    s: &AllAtomStructure,
    noisy: &AllAtomStructure,
    z_t: &Tensor,
    t: usize,
) -> Observed {
    let latent = vqvae.encode(&prepare_input(s, &vqvae.config).unwrap()).unwrap();
    let indices = vqvae.quantize(&latent).unwrap().indices;
    let graph = denoiser.graph(&coarse_grain(s).unwrap());
    let out = denoiser.denoise(&graph, z_t, &[t]).unwrap();
    Observed {
        latent: latent.into_data(),
        indices,
        eps: out.eps_hat.into_data(),
        v: out.v.into_data(),
        scores: vec![
            clash_score(s).unwrap(),
            interaction_score(s),
            clash_score(noisy).unwrap(),
            interaction_score(noisy),
        ],
    }
}

fn rigid_invariance() -> Outcome {
    let start = Instant::now();
    let vqvae = VqVae::new(VqvaeConfig {
        codebook_size: 64,
        encoder_hidden: 16,
        encoder_layers: 2,
        decoder_hidden: 16,
        seed: 5,
        ..VqvaeConfig::default()
    })
    .unwrap();
    let denoiser = Denoiser::new(DenoiserConfig {
        k_neighbors: 8,
        hidden: 16,
        layers_enc: 2,
        layers_dec: 2,
        seed: 6,
        ..DenoiserConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut feature_err, mut score_err) = (0.0f64, 0.0f64);
    let mut noisy_clashes = 0.0;
    for (k, name) in FIXTURES.iter().enumerate() {
        let s = fixture(name);
        let noisy = jitter(&s, 1.2, k as u64);
        let n = s.residue_count();
        let z_t = Tensor::new(vec![n, 3], (0..3 * n).map(|_| standard_normal(&mut rng)).collect()).unwrap();
        let t = rng.random_range(1..=1000);
        let base = observe(&vqvae, &denoiser, &s, &noisy, &z_t, t);
        noisy_clashes += base.scores[2];
        for _ in 0..RIGID_MOTIONS {
            let rot = random_rotation(&mut rng);
            let shift: Vec3 = std::array::from_fn(|_| rng.random_range(-50.0..50.0));
            let moved = s.map_positions(|p| transform(&rot, shift, p));
            let moved_noisy = noisy.map_positions(|p| transform(&rot, shift, p));
            let got = observe(&vqvae, &denoiser, &moved, &moved_noisy, &z_t, t);
            ensure(got.indices == base.indices, || format!("{name}: code indices changed"))?;
            feature_err = feature_err
                .max(max_abs_diff(&got.latent, &base.latent))
                .max(max_abs_diff(&got.eps, &base.eps))
                .max(max_abs_diff(&got.v, &base.v));
            score_err = score_err.max(max_abs_diff(&got.scores, &base.scores));
        }
    }
    let elapsed = start.elapsed();
    ensure(noisy_clashes > 0.0, || "jittered copies should contain clashes".into())?;
    ensure(feature_err <= INVARIANCE_TOL, || {
        format!("feature deviation {feature_err:.3e}")
    })?;
    ensure(score_err <= INVARIANCE_TOL, || {
        format!("score deviation {score_err:.3e}")
    })?;
    within(elapsed, INVARIANCE_LIMIT)?;
    Ok(format!(
        "{} fixtures x {RIGID_MOTIONS} motions, max feature dev {feature_err:.1e}, max score dev {score_err:.1e}, indices exact, {elapsed:.2?}",
        FIXTURES.len()
    ))
}

// ---------------------------------------------------------------- 3

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(FD_FLOOR)
}

type Graph<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

/// Worst relative error of tape input gradients against central differences.
fn input_fd(f: &Graph, inputs: &[Tensor]) -> f64 {
    let eval = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or(vec![0.0; input.numel()]);
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

/// Worst relative error of parameter gradients on up to `per_param` random
/// coordinates of each parameter accepted by `filter`. `analytic` holds the
/// tape gradients; `value(store, name)` is the scalar whose derivative they
/// should equal for parameter `name`.
fn param_fd(
    store: &ParamStore,
    analytic: &Gradients,
    value: &dyn Fn(&ParamStore, &str) -> f64,
    filter: &dyn Fn(&str) -> bool,
    per_param: usize,
    rng: &mut impl Rng,
) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        if !filter(&name) {
            continue;
        }
        let grad = analytic.dense(store, id);
        for _ in 0..per_param.min(grad.len()) {
            let i = rng.random_range(0..grad.len());
            let probe = |delta: f64| {
                let mut s = store.clone();
                s.get_mut(id).data_mut()[i] += delta;
                value(&s, &name)
            };
            let numeric = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad[i], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

fn random(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut t = random(shape, rng, 0.05, 2.0);
    for x in t.data_mut() {
        if rng.random_bool(0.5) {
            *x = -*x;
        }
    }
    t
}

/// Weighted sum, so each output element gets a distinct upstream gradient.
fn weighted(tape: &mut Tape, v: Var) -> Var {
    let shape = tape.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.7 * ((i * 7919) % 13) as f64 / 13.0).collect();
    let w = tape.constant(Tensor::new(shape, w).unwrap());
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}

struct FdLedger {
    rows: Vec<(String, usize, f64)>,
}

impl FdLedger {
    fn record(&mut self, name: &str, errors: impl IntoIterator<Item = f64>) {
        let errors: Vec<f64> = errors.into_iter().collect();
        let worst = errors.iter().copied().fold(0.0, f64::max);
        self.rows.push((name.to_string(), errors.len(), worst));
    }
}

fn op_checks(ledger: &mut FdLedger, rng: &mut ChaCha8Rng) {
    let unary: [(&str, fn(&mut Tape, Var) -> Var); 8] = [
        ("relu", Tape::relu),
        ("silu", Tape::silu),
        ("sigmoid", Tape::sigmoid),
        ("softplus", Tape::softplus),
        ("exp", Tape::exp),
        ("square", Tape::square),
        ("tanh", Tape::tanh),
        ("softmax", Tape::softmax),
    ];
    for (name, op) in unary {
        let errs: Vec<f64> = (0..FD_INSTANCES)
            .map(|_| {
                let x = away_from_zero(&[3, 4], rng);
                input_fd(
                    &|t, v| {
                        let y = op(t, v[0]);
                        weighted(t, y)
                    },
                    &[x],
                )
            })
            .collect();
        ledger.record(name, errs);
    }
    let n = FD_INSTANCES;
    let mut run = |name: &str, make: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let errs: Vec<f64> = (0..n).map(|_| make(rng)).collect();
        ledger.record(name, errs);
    };
    run("log", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.log(v[0]);
                weighted(t, y)
            },
            &[random(&[3, 4], r, 0.1, 3.0)],
        )
    });
    run("layer_norm", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.layer_norm(v[0], 1e-5);
                weighted(t, y)
            },
            &[random(&[3, 5], r, -2.0, 2.0)],
        )
    });
    run("scale/add_scalar/mean", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.scale(v[0], -1.7);
                let y = t.add_scalar(y, 0.4);
                let y = t.square(y);
                t.mean(y)
            },
            &[random(&[2, 3], r, -2.0, 2.0)],
        )
    });
    run("sum", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.tanh(v[0]);
                t.sum(y)
            },
            &[random(&[2, 3], r, -2.0, 2.0)],
        )
    });
    let binary: [(
        &str,
        fn(&mut Tape, Var, Var) -> Result<Var, ldb_core::tensor_nn::TensorError>,
    ); 3] = [("add", Tape::add), ("sub", Tape::sub), ("mul", Tape::mul)];
    for (name, op) in binary {
        run(name, &mut |r| {
            let a = random(&[3, 4], r, -2.0, 2.0);
            let full = random(&[3, 4], r, -2.0, 2.0);
            let row = random(&[4], r, -2.0, 2.0);
            let f = |t: &mut Tape, v: &[Var]| {
                let y = op(t, v[0], v[1]).unwrap();
                weighted(t, y)
            };
            input_fd(&f, &[a.clone(), full]).max(input_fd(&f, &[a, row]))
        });
    }
    run("matmul", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                weighted(t, y)
            },
            &[random(&[3, 4], r, -2.0, 2.0), random(&[4, 2], r, -2.0, 2.0)],
        )
    });
    run("atan2", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.atan2(v[0], v[1]).unwrap();
                weighted(t, y)
            },
            &[away_from_zero(&[5], r), away_from_zero(&[5], r)],
        )
    });
    run("angle_diff", &mut |r| {
        let near = input_fd(
            &|t, v| {
                let y = t.angle_diff(v[0], v[1]).unwrap();
                weighted(t, y)
            },
            &[random(&[5], r, -1.4, 1.4), random(&[5], r, -1.4, 1.4)],
        );
        let wrapped = input_fd(
            &|t, v| {
                let y = t.angle_diff(v[0], v[1]).unwrap();
                let y = t.square(y);
                t.sum(y)
            },
            &[random(&[5], r, 2.0, 3.0), random(&[5], r, -3.0, -2.0)],
        );
        near.max(wrapped)
    });
    run("concat_cols", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.concat_cols(&[v[0], v[1]]).unwrap();
                let y = t.square(y);
                weighted(t, y)
            },
            &[random(&[4, 3], r, -2.0, 2.0), random(&[4, 2], r, -2.0, 2.0)],
        )
    });
    run("concat_rows", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.concat_rows(&[v[0], v[1]]).unwrap();
                let y = t.tanh(y);
                weighted(t, y)
            },
            &[random(&[4, 3], r, -2.0, 2.0), random(&[2, 3], r, -2.0, 2.0)],
        )
    });
    run("slice_cols", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.slice_cols(v[0], 1, 3).unwrap();
                let y = t.square(y);
                weighted(t, y)
            },
            &[random(&[4, 3], r, -2.0, 2.0)],
        )
    });
    run("gather_rows", &mut |r| {
        let index: Vec<usize> = (0..6).map(|_| r.random_range(0..4)).collect();
        input_fd(
            &|t, v| {
                let y = t.gather_rows(v[0], &index).unwrap();
                let y = t.square(y);
                weighted(t, y)
            },
            &[random(&[4, 3], r, -2.0, 2.0)],
        )
    });
    run("scatter_add_rows", &mut |r| {
        let index: Vec<usize> = (0..4).map(|_| r.random_range(0..5)).collect();
        input_fd(
            &|t, v| {
                let y = t.scatter_add_rows(v[0], &index, 5).unwrap();
                let y = t.square(y);
                weighted(t, y)
            },
            &[random(&[4, 3], r, -2.0, 2.0)],
        )
    });
    run("row_scale", &mut |r| {
        let w: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        input_fd(
            &|t, v| {
                let y = t.row_scale(v[0], &w).unwrap();
                let y = t.square(y);
                weighted(t, y)
            },
            &[random(&[4, 3], r, -2.0, 2.0)],
        )
    });
    run("sum_rows", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.sum_rows(v[0]).unwrap();
                let y = t.square(y);
                weighted(t, y)
            },
            &[random(&[4, 3], r, -2.0, 2.0)],
        )
    });
    run("reshape", &mut |r| {
        input_fd(
            &|t, v| {
                let y = t.reshape(v[0], &[3, 4]).unwrap();
                let y = t.softmax(y);
                weighted(t, y)
            },
            &[random(&[4, 3], r, -2.0, 2.0)],
        )
    });
}

/// Loss value and parameter gradients of a graph built from `store`.
fn store_loss(store: &ParamStore, build: &dyn Fn(&mut Tape, &ParamStore) -> Var) -> (f64, Gradients) {
    let mut tape = Tape::new();
    let out = build(&mut tape, store);
    let value = tape.value(out).item();
    tape.backward(out).unwrap();
    (value, tape.param_grads(store))
}

fn randomize(store: &mut ParamStore, rng: &mut impl Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for x in store.get_mut(id).data_mut() {
            *x = rng.random_range(-0.8..0.8);
        }
    }
}

fn layer_checks(ledger: &mut FdLedger, rng: &mut ChaCha8Rng) {
    let mut errs = Vec::new();
    for _ in 0..FD_INSTANCES {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 4, 3, rng);
        let mlp = Mlp::new(&mut store, "mlp", &[3, 5, 2], rng);
        let ada = AdaLayerNorm::new(&mut store, "ada", 3, 2);
        randomize(&mut store, rng);
        let x = random(&[5, 4], rng, -1.5, 1.5);
        let cond = random(&[5, 3], rng, -1.5, 1.5);
        let build = |tape: &mut Tape, s: &ParamStore| {
            let xv = tape.constant(x.clone());
            let cv = tape.constant(cond.clone());
            let h = lin.forward(tape, s, xv).unwrap();
            let h = mlp.forward(tape, s, h).unwrap();
            let h = ada.forward(tape, s, h, cv).unwrap();
            weighted(tape, h)
        };
        let (_, grads) = store_loss(&store, &build);
        let value = |s: &ParamStore, _: &str| store_loss(s, &build).0;
        errs.push(param_fd(&store, &grads, &value, &|_| true, 4, rng).0);
    }
    ledger.record("Linear/Mlp/AdaLayerNorm params", errs);
}

fn vqvae_terms(model: &VqVae, sample: &VqvaeSample, indices: &[usize], quantizer: Quantizer) -> (Tape, [Var; 4]) {
    let mut tape = Tape::new();
    let latent = model.encoder.forward(&mut tape, &model.store, &sample.input).unwrap();
    let pass = model
        .forward_from_latent(
            &mut tape,
            latent,
            &sample.input.residue_types,
            quantizer,
            Some(indices.to_vec()),
        )
        .unwrap();
    let t = model
        .loss(&mut tape, &pass, &sample.target, &sample.input.residue_types)
        .unwrap();
    (tape, [t.total, t.recon, t.codebook, t.commit])
}

/// The part of the total loss whose gradient reaches parameter `name`; the
/// stop-gradients hide the rest from the tape but not from finite differences.
fn visible_loss(name: &str, tape: &Tape, terms: &[Var; 4], beta: f64) -> f64 {
    let value = |v: Var| tape.value(v).item();
    let [_, recon, codebook, commit] = *terms;
    if name.starts_with("codebook.entries") {
        value(recon) + value(codebook)
    } else if name.starts_with("encoder.") || name.starts_with("codebook.down") {
        value(recon) + beta * value(commit)
    } else {
        value(recon)
    }
}

fn vqvae_loss_checks(ledger: &mut FdLedger, rng: &mut ChaCha8Rng) {
    let structures: Vec<AllAtomStructure> = ["dipeptide", "tetrapeptide"].iter().map(|n| fixture(n)).collect();
    let mut identity = Vec::new();
    let mut straight = Vec::new();
    for i in 0..FD_INSTANCES {
        let model = VqVae::new(VqvaeConfig {
            codebook_size: 16,
            encoder_hidden: 8,
            encoder_layers: 1,
            decoder_hidden: 8,
            latent_dim: 6,
            seed: 100 + i as u64,
            ..VqvaeConfig::default()
        })
        .unwrap();
        let sample = VqvaeSample::from_structure(&structures[i % 2], &model).unwrap();
        let indices = model.reconstruct(&sample.input).unwrap().0.indices;
        for (quantizer, out, filter) in [
            (Quantizer::Identity, &mut identity, (|_: &str| true) as fn(&str) -> bool),
            (Quantizer::StraightThrough, &mut straight, |n: &str| {
                n.starts_with("decoder.") || n.starts_with("codebook.up")
            }),
        ] {
            let (mut tape, terms) = vqvae_terms(&model, &sample, &indices, quantizer);
            tape.backward(terms[0]).unwrap();
            let grads = tape.param_grads(&model.store);
            let value = |s: &ParamStore, name: &str| {
                let mut m = model.clone();
                m.store = s.clone();
                let (tape, terms) = vqvae_terms(&m, &sample, &indices, quantizer);
                visible_loss(name, &tape, &terms, model.config.beta_commit)
            };
            out.push(param_fd(&model.store, &grads, &value, &filter, 2, rng).0);
        }
    }
    ledger.record("VQ-VAE loss (all params, identity quantizer)", identity);
    ledger.record("VQ-VAE loss (decoder params, straight-through)", straight);
}

fn diffusion_loss_checks(ledger: &mut FdLedger, rng: &mut ChaCha8Rng) {
    let schedule = linear_schedule(1000, 1e-4, 2e-2).unwrap();
    let mut errs = Vec::new();
    for i in 0..FD_INSTANCES {
        let learned = i % 4 != 3;
        let rows = 4;
        let t: Vec<usize> = (0..rows)
            .map(|r| if r == 0 { 1 } else { rng.random_range(1..=1000) })
            .collect();
        let z0 = random(&[rows, 3], rng, -1.5, 1.5);
        let noise = random(&[rows, 3], rng, -1.5, 1.5);
        let eps_hat = random(&[rows, 3], rng, -1.5, 1.5);
        let v = random(&[rows, 3], rng, 0.05, 0.95);
        let terms = |e: &Tensor, vv: &Tensor| {
            let mut tape = Tape::new();
            let ev = tape.variable(e.clone());
            let vv = tape.variable(vv.clone());
            let loss = diffusion_loss(&mut tape, &schedule, &t, &z0, &noise, ev, vv, learned, 0.001).unwrap();
            (tape, ev, vv, loss)
        };
        let (mut tape, ev, vv, loss) = terms(&eps_hat, &v);
        tape.backward(loss.total).unwrap();
        let g_eps = tape.grad(ev).map(<[f64]>::to_vec).unwrap_or(vec![0.0; eps_hat.numel()]);
        let g_v = tape.grad(vv).map(<[f64]>::to_vec).unwrap_or(vec![0.0; v.numel()]);
        let mut worst = 0.0f64;
        for k in 0..eps_hat.numel() {
            // the variance bound sees the mean through a stop-gradient, so the
            // noise prediction is trained by the simple term alone
            let simple = |d: f64| {
                let mut e = eps_hat.clone();
                e.data_mut()[k] += d;
                let (tape, _, _, loss) = terms(&e, &v);
                tape.value(loss.simple).item()
            };
            worst = worst.max(rel_err(
                g_eps[k],
                (simple(FD_STEP) - simple(-FD_STEP)) / (2.0 * FD_STEP),
            ));
            let total = |d: f64| {
                let mut vv = v.clone();
                vv.data_mut()[k] += d;
                let (tape, _, _, loss) = terms(&eps_hat, &vv);
                tape.value(loss.total).item()
            };
            worst = worst.max(rel_err(g_v[k], (total(FD_STEP) - total(-FD_STEP)) / (2.0 * FD_STEP)));
        }
        errs.push(worst);
    }
    ledger.record("diffusion hybrid loss", errs);
}

fn denoiser_checks(ledger: &mut FdLedger, rng: &mut ChaCha8Rng) {
    let cg = coarse_grain(&fixture("pep_mktayiakqr")).unwrap();
    let mut errs = Vec::new();
    for i in 0..FD_INSTANCES {
        let model = Denoiser::new(DenoiserConfig {
            k_neighbors: 4,
            hidden: 8,
            layers_enc: 1,
            layers_dec: 1,
            seed: 200 + i as u64,
            ..DenoiserConfig::default()
        })
        .unwrap();
        let mut store = model.store.clone();
        // the output head starts at zero; move it off so every layer matters
        let head: Vec<ParamId> = store.ids().filter(|&id| store.name(id).starts_with("head.")).collect();
        for id in head {
            for x in store.get_mut(id).data_mut() {
                *x = rng.random_range(-0.5..0.5);
            }
        }
        let graph = model.graph(&cg);
        let z = random(&[cg.len(), 3], rng, -1.5, 1.5);
        let t = rng.random_range(1..=1000);
        let build = |tape: &mut Tape, s: &ParamStore| {
            let mut m = model.clone();
            m.store = s.clone();
            let zv = tape.constant(z.clone());
            let (eps, v) = m.forward(tape, &graph, zv, &[t]).unwrap();
            let both = tape.concat_cols(&[eps, v]).unwrap();
            weighted(tape, both)
        };
        let (_, grads) = store_loss(&store, &build);
        let value = |s: &ParamStore, _: &str| store_loss(s, &build).0;
        errs.push(param_fd(&store, &grads, &value, &|_| true, 1, rng).0);
    }
    ledger.record("denoiser network params", errs);
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ledger = FdLedger { rows: Vec::new() };
    op_checks(&mut ledger, &mut rng);
    layer_checks(&mut ledger, &mut rng);
    vqvae_loss_checks(&mut ledger, &mut rng);
    diffusion_loss_checks(&mut ledger, &mut rng);
    denoiser_checks(&mut ledger, &mut rng);
    let elapsed = start.elapsed();
    let mut failures = Vec::new();
    for (name, count, worst) in &ledger.rows {
        if *count < FD_INSTANCES || *worst >= FD_TOL || !worst.is_finite() {
            failures.push(format!("{name}: {count} instances, worst {worst:.2e}"));
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    within(elapsed, FD_LIMIT)?;
    let worst = ledger.rows.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(format!(
        "{} checks x {FD_INSTANCES} instances (h={FD_STEP:e}), worst relative error {worst:.2e}, {elapsed:.2?}",
        ledger.rows.len()
    ))
}

// ---------------------------------------------------------------- 4

fn marginal_consistency() -> Outcome {
    let start = Instant::now();
    let schedule = linear_schedule(1000, 1e-4, 2e-2).unwrap();
    let z0 = Tensor::new(vec![1, 3], vec![1.5, -0.7, 0.2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = MARGINAL_DRAWS as f64;
    let mut worst = 0.0f64;
    for t in MARGINAL_TIMES {
        let draws: Vec<Vec<f64>> = (0..MARGINAL_DRAWS)
            .map(|_| iterated_forward(&schedule, &z0, t, &mut rng).unwrap().into_data())
            .collect();
        let a = schedule.alpha_bar(t);
        let var = 1.0 - a;
        for d in 0..3 {
            let xs: Vec<f64> = draws.iter().map(|x| x[d]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let sample_var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let mean_z = (mean - a.sqrt() * z0.data()[d]).abs() / (var / n).sqrt();
            let var_z = (sample_var - var).abs() / (var * (2.0 / (n - 1.0)).sqrt());
            ensure(mean_z <= MARGINAL_SE, || {
                format!("t={t} dim {d}: mean off by {mean_z:.2} SE")
            })?;
            ensure(var_z <= MARGINAL_SE, || {
                format!("t={t} dim {d}: variance off by {var_z:.2} SE")
            })?;
            worst = worst.max(mean_z).max(var_z);
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, MARGINAL_LIMIT)?;
    Ok(format!(
        "t in {MARGINAL_TIMES:?}, {MARGINAL_DRAWS} draws, worst deviation {worst:.2} SE (limit {MARGINAL_SE}), {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------- 5

struct Counting<'a> {
    model: &'a Denoiser,
    graph: ldb_core::denoiser::CgGraph,
    calls: usize,
}

impl Denoise for Counting<'_> {
    fn denoise(&mut self, z_t: &Tensor, t: usize) -> Result<DenoiserOutput, DiffusionError> {
        self.calls += 1;
        self.model
            .denoise(&self.graph, z_t, &[t])
            .map_err(|e| DiffusionError::Model(e.to_string()))
    }
}

fn strided_sampler() -> Outcome {
    let model = Denoiser::new(DenoiserConfig {
        k_neighbors: 6,
        hidden: 16,
        layers_enc: 1,
        layers_dec: 1,
        seed: 9,
        ..DenoiserConfig::default()
    })
    .unwrap();
    let cg = coarse_grain(&fixture("pep_mktayiakqr")).unwrap();
    let schedule = linear_schedule(1000, 1e-4, 2e-2).unwrap();
    let shape = [cg.len(), 3];
    let mut counting = Counting {
        model: &model,
        graph: model.graph(&cg),
        calls: 0,
    };
    for learned in [true, false] {
        let strided = sample(
            &mut counting,
            &schedule,
            &shape,
            1000,
            learned,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let full = sample_full(
            &mut counting,
            &schedule,
            &shape,
            learned,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let same = strided
            .data()
            .iter()
            .zip(full.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || {
            format!("num_steps = T differs from the full sampler (learned variance {learned})")
        })?;
    }
    counting.calls = 0;
    sample(
        &mut counting,
        &schedule,
        &shape,
        100,
        true,
        &mut ChaCha8Rng::seed_from_u64(6),
    )
    .unwrap();
    ensure(counting.calls == 100, || {
        format!("100-step sampling made {} denoiser calls", counting.calls)
    })?;
    Ok("num_steps = 1000 bit-identical to the full chain (both variance modes); 100 steps = 100 calls".into())
}

// ---------------------------------------------------------------- 6

fn brute_bonds(s: &AllAtomStructure) -> BTreeSet<(usize, usize)> {
    let atoms = s.atoms();
    let mut out = BTreeSet::new();
    for i in 0..atoms.len() {
        for j in i + 1..atoms.len() {
            let cutoff =
                atoms[i].element.covalent_radius() + atoms[j].element.covalent_radius() + DEFAULT_BOND_TOLERANCE;
            if distance(atoms[i].position, atoms[j].position) <= cutoff {
                out.insert((i, j));
            }
        }
    }
    out
}

fn brute_clash(s: &AllAtomStructure) -> f64 {
    let bonds = topology_bond_graph(s, TopologyTable::standard());
    let n = s.atom_count();
    let bonded = |i: usize, j: usize| bonds.contains(i, j);
    let near = |i: usize, j: usize| bonded(i, j) || (0..n).any(|k| k != i && k != j && bonded(i, k) && bonded(k, j));
    let p = s.positions();
    let (mut counted, mut clashes) = (0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            if near(i, j) {
                continue;
            }
            counted += 1;
            if distance(p[i], p[j]) < 1.2 {
                clashes += 1;
            }
        }
    }
    1000.0 * clashes as f64 / counted as f64
}

const RINGS: [(ResidueType, &[&str]); 4] = [
    (ResidueType::Phe, &["CG", "CD1", "CD2", "CE1", "CE2", "CZ"]),
    (ResidueType::Tyr, &["CG", "CD1", "CD2", "CE1", "CE2", "CZ"]),
    (ResidueType::His, &["CG", "ND1", "CD2", "CE1", "NE2"]),
    (
        ResidueType::Trp,
        &["CG", "CD1", "CD2", "NE1", "CE2", "CE3", "CZ2", "CZ3", "CH2"],
    ),
];

fn brute_interaction(s: &AllAtomStructure) -> f64 {
    let bonds = topology_bond_graph(s, TopologyTable::standard());
    let atoms = s.atoms();
    let res = s.atom_residue_map();
    let polar = |e: Element| matches!(e, Element::N | Element::O | Element::S);
    let mut total = 0.0;
    for i in 0..atoms.len() {
        for j in i + 1..atoms.len() {
            if polar(atoms[i].element) && polar(atoms[j].element) && res[i] != res[j] && !bonds.contains(i, j) {
                let d = distance(atoms[i].position, atoms[j].position);
                if d <= 3.3 {
                    total += (d * d - 4.0).max(0.0);
                }
            }
        }
    }
    let mut centers = Vec::new();
    for r in 0..s.residue_count() {
        let rt = s.residues()[r].residue_type;
        let Some((_, names)) = RINGS.iter().find(|(t, _)| *t == rt) else {
            continue;
        };
        let pts: Vec<Vec3> = names
            .iter()
            .filter_map(|n| s.find_atom(r, n))
            .map(|i| atoms[i].position)
            .collect();
        if pts.len() == names.len() {
            centers.push([0, 1, 2].map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64));
        }
    }
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            let d = distance(centers[a], centers[b]);
            if d <= 5.5 {
                total += (d * d - 6.0).max(0.0);
            }
        }
    }
    total
}

fn graph_of(nodes: usize, edges: &BTreeSet<(usize, usize)>) -> BondGraph {
    let mut g = BondGraph::new(nodes);
    for &(a, b) in edges {
        g.add_edge(a, b);
    }
    g
}

fn atom(name: &str, element: Element, residue: ResidueType, index: i32, position: Vec3) -> AtomRecord {
    AtomRecord {
        serial: 0,
        atom_name: name.into(),
        element,
        residue_name: residue,
        residue_index: index,
        chain_id: 'A',
        position,
    }
}

fn metric_oracles() -> Outcome {
    let mut structures = 0;
    for (k, name) in FIXTURES.iter().chain(["chain140"].iter()).enumerate() {
        let clean = fixture(name);
        for s in [jitter(&clean, 0.0, 0), jitter(&clean, 0.7, 40 + k as u64)] {
            let clash = clash_score(&s).map_err(|e| e.to_string())?;
            ensure(clash == brute_clash(&s), || {
                format!("{name}: clash {clash} vs {}", brute_clash(&s))
            })?;
            let inter = interaction_score(&s);
            let oracle = brute_interaction(&s);
            ensure((inter - oracle).abs() <= METRIC_TOL * (1.0 + oracle), || {
                format!("{name}: interaction {inter} vs {oracle}")
            })?;
            let edges = brute_bonds(&s);
            let built = build_bond_graph(&s, DEFAULT_BOND_TOLERANCE);
            ensure(built.edges == edges, || {
                format!("{name}: bond graph differs from enumeration")
            })?;
            let ref_edges = brute_bonds(&clean);
            let diff = edges.symmetric_difference(&ref_edges).count() as f64;
            let n = s.atom_count();
            let ged = ged_ratio(&graph_of(n, &edges), &graph_of(n, &ref_edges)).map_err(|e| e.to_string())?;
            ensure(ged == diff / (n + ref_edges.len()) as f64, || {
                format!("{name}: GED {ged}")
            })?;
            let gdr_value = gdr(&s, &clean).map_err(|e| e.to_string())?;
            ensure(gdr_value == 100.0 * diff / ref_edges.len().max(1) as f64, || {
                format!("{name}: GDR {gdr_value}")
            })?;
            structures += 1;
        }
    }

    let glycines = AllAtomStructure::from_atoms(
        vec![
            atom("N", Element::N, ResidueType::Gly, 1, [0.0, 0.0, 0.0]),
            atom("CA", Element::C, ResidueType::Gly, 1, [-1.45, 0.0, 0.0]),
            atom("N", Element::N, ResidueType::Gly, 2, [3.0, 0.0, 0.0]),
            atom("CA", Element::C, ResidueType::Gly, 2, [4.45, 0.0, 0.0]),
        ],
        None,
    )
    .unwrap();
    let pair = interaction_score(&glycines);
    ensure((pair - 5.0).abs() < METRIC_TOL, || {
        format!("N-N pair at 3.0 Å scored {pair}")
    })?;

    let path = |edges: &[(usize, usize)]| graph_of(4, &edges.iter().copied().collect());
    let ged = ged_ratio(&path(&[(0, 1), (1, 2)]), &path(&[(0, 1), (1, 2), (2, 3)])).unwrap();
    ensure((ged - 1.0 / 7.0).abs() < 1e-15, || format!("GED example gave {ged}"))?;

    let s = fixture("dipeptide");
    let r = s.residue_count() - 1;
    let (c, o) = (s.find_atom(r, "C").unwrap(), s.find_atom(r, "O").unwrap());
    let (pc, po) = (s.atoms()[c].position, s.atoms()[o].position);
    let len = distance(pc, po);
    let mut atoms = s.atoms().to_vec();
    atoms[o].position = [0, 1, 2].map(|k| po[k] + (po[k] - pc[k]) / len);
    let stretched = AllAtomStructure::from_atoms(atoms, None).unwrap();
    let ref_bonds = brute_bonds(&s).len();
    let gdr_one = gdr(&stretched, &s).unwrap();
    ensure((gdr_one - 100.0 / ref_bonds as f64).abs() < 1e-12, || {
        format!("single broken bond gave GDR {gdr_one}")
    })?;

    Ok(format!(
        "{structures} structures equal brute force; pair at 3.0 Å = {pair}, GED = 1/7, one broken bond = {gdr_one:.3}%"
    ))
}

// ---------------------------------------------------------------- 7, 8

struct E2eRun {
    dir: PathBuf,
    report: EvaluationReport,
    elapsed: Duration,
}

fn e2e_run(dir: &Path) -> Result<E2eRun, String> {
    let start = Instant::now();
    let _ = std::fs::remove_dir_all(dir);
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let entries: Vec<_> = TRAINING_PEPTIDES
        .iter()
        .map(|n| json!({"path": fixture_path(n), "split": "train"}))
        .collect();
    let manifest = dir.join("manifest.json");
    std::fs::write(&manifest, serde_json::Value::Array(entries).to_string()).map_err(|e| e.to_string())?;
    let data = dir.join("data");
    let summary = prepare(&manifest, None, &data).map_err(|e| e.to_string())?;
    ensure(summary.accepted == 3, || {
        format!("prepare accepted {}", summary.accepted)
    })?;
    for name in TRAINING_PEPTIDES {
        let residues = fixture(name).residue_count();
        ensure(residues <= 15, || format!("{name} has {residues} residues"))?;
    }
    std::fs::write(
        dir.join("vqvae.json"),
        json!({
            "data": "data", "out_dir": "runs", "log_every": 50, "seed": 1,
            "vqvae": {"codebook_size": 64, "encoder_hidden": 32, "encoder_layers": 2, "decoder_hidden": 64,
                      "max_epochs": 600, "patience": 0, "batch_size": 1, "lr": 3e-3}
        })
        .to_string(),
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(
        dir.join("diffusion.json"),
        json!({
            "data": "data", "out_dir": "runs", "log_every": 250, "seed": 1,
            "diffusion": {"T": 1000, "sample_steps": 100},
            "denoiser": {"k_neighbors": 10, "hidden": 32, "layers_enc": 2, "layers_dec": 2, "batch": 3,
                         "warmup": 100, "total": 3000, "lr": 1e-3, "lr_final": 1e-5}
        })
        .to_string(),
    )
    .map_err(|e| e.to_string())?;
    let vqvae = train_vqvae(&dir.join("vqvae.json")).map_err(|e| e.to_string())?;
    let diffusion = train_diffusion(&dir.join("diffusion.json"), &vqvae).map_err(|e| e.to_string())?;

    let cg_dir = dir.join("cg");
    std::fs::create_dir_all(&cg_dir).map_err(|e| e.to_string())?;
    for name in TRAINING_PEPTIDES {
        let file = format!("{name}.cg.pdb");
        std::fs::copy(data.join(&file), cg_dir.join(&file)).map_err(|e| e.to_string())?;
    }
    let options = BackmapOptions {
        samples: E2E_SAMPLES,
        steps: 100,
        seed: 42,
        snap: true,
    };
    let generated = dir.join("generated");
    let summary = backmap(&cg_dir, &vqvae, &diffusion, options, &generated).map_err(|e| e.to_string())?;
    ensure(summary.failures.is_empty(), || {
        format!("{} samples failed", summary.failures.len())
    })?;
    let report = evaluate(&generated, &data, &dir.join("report.json")).map_err(|e| e.to_string())?;
    Ok(E2eRun {
        dir: dir.to_path_buf(),
        report,
        elapsed: start.elapsed(),
    })
}

fn e2e_root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn first_run() -> &'static Result<E2eRun, String> {
    static RUN: OnceLock<Result<E2eRun, String>> = OnceLock::new();
    RUN.get_or_init(|| e2e_run(&e2e_root().join("run1")))
}

fn tiny_reproduction() -> Outcome {
    let run = first_run().as_ref().map_err(Clone::clone)?;
    let a = &run.report.aggregate;
    let count = a.rmsd.per_structure.len();
    ensure(count == E2E_SAMPLES * TRAINING_PEPTIDES.len(), || {
        format!("{count} samples evaluated")
    })?;
    let line = format!(
        "RMSD {:.3} Å, GED {:.4}, clash {:.2}‰, GDR {:.3}% over {count} samples, {:.1?}",
        a.rmsd.mean, a.ged_ratio.mean, a.clash_permille.mean, a.gdr_percent.mean, run.elapsed
    );
    ensure(a.rmsd.mean < E2E_RMSD, || format!("{line}: RMSD >= {E2E_RMSD}"))?;
    ensure(a.ged_ratio.mean < E2E_GED, || format!("{line}: GED >= {E2E_GED}"))?;
    ensure(a.clash_permille.mean <= E2E_CLASH, || {
        format!("{line}: clashes present")
    })?;
    ensure(a.gdr_percent.mean < E2E_GDR, || format!("{line}: GDR >= {E2E_GDR}%"))?;
    within(run.elapsed, E2E_LIMIT)?;
    Ok(line)
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// File contents with the wall-clock field of log lines removed.
fn comparable(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    if path.extension().is_some_and(|e| e == "jsonl") {
        let text = String::from_utf8(bytes).unwrap();
        return text
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                v.to_string() + "\n"
            })
            .collect::<String>()
            .into_bytes();
    }
    bytes
}

fn determinism() -> Outcome {
    let first = first_run().as_ref().map_err(Clone::clone)?;
    let second = e2e_run(&e2e_root().join("run2"))?;
    let files = files_under(&first.dir);
    ensure(files == files_under(&second.dir), || {
        "runs produced different file sets".into()
    })?;
    let differing: Vec<String> = files
        .iter()
        .filter(|f| comparable(&first.dir.join(f)) != comparable(&second.dir.join(f)))
        .map(|f| f.display().to_string())
        .collect();
    ensure(differing.is_empty(), || {
        format!("differing files: {}", differing.join(", "))
    })?;
    Ok(format!(
        "{} files byte-identical across two runs (log wall-clock fields excluded)",
        files.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("geometry roundtrip", geometry_roundtrip),
        ("rigid-motion invariance", rigid_invariance),
        ("gradient checks", gradient_checks),
        ("diffusion marginal consistency", marginal_consistency),
        ("strided sampler consistency", strided_sampler),
        ("metric oracles", metric_oracles),
        ("tiny end-to-end reproduction", tiny_reproduction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
