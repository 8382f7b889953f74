//! Finite-difference gradient cases shared by the test targets.

use lightplan::normalnet::{forward, normal_loss, selected_to_rows, NetShape, NormalNetParams};
use lightplan::selector::soft_select;
use lightplan::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

pub struct Case {
    pub name: &'static str,
    pub composite: bool,
    inputs: Vec<Tensor>,
    build: Build,
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, v).unwrap()
}

/// Entries bounded away from zero so relu kinks stay out of reach of `H`.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let v = (0..rows * cols)
        .map(|_| {
            let x: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(rows, cols, v).unwrap()
}

fn eval(inputs: &[Tensor], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item()
}

impl Case {
    /// Largest relative error over the inputs, per input tensor
    /// `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)`. Panics if any numeric gradient
    /// vanishes, since that would make the comparison meaningless.
    pub fn relative_error(&self) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = (self.build)(&mut tape, &vars);
        tape.backward(loss).unwrap();
        let mut worst = 0.0f64;
        for (i, v) in vars.iter().enumerate() {
            let analytic = tape.grad(*v).unwrap();
            let mut numeric = vec![0.0; self.inputs[i].len()];
            for (j, slot) in numeric.iter_mut().enumerate() {
                let mut plus = self.inputs.clone();
                plus[i].values_mut()[j] += H;
                let mut minus = self.inputs.clone();
                minus[i].values_mut()[j] -= H;
                *slot = (eval(&plus, &self.build) - eval(&minus, &self.build)) / (2.0 * H);
            }
            let diff = analytic
                .values()
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let na = analytic.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(nn > 1e-6, "{}: input {i} has a vanishing gradient", self.name);
            worst = worst.max(diff / na.max(nn));
        }
        worst
    }
}

/// Contracts `out` with a fixed random tensor so every output entry
/// carries a distinct weight into the scalar.
fn probe(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let [r, c] = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c));
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var + 'static) -> Case {
    Case {
        name,
        composite: false,
        inputs,
        build: Box::new(build),
    }
}

fn composite(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var + 'static) -> Case {
    Case {
        composite: true,
        ..case(name, inputs, build)
    }
}

fn unit_rows(mut t: Tensor) -> Tensor {
    for r in 0..t.rows() {
        let norm = (0..t.cols()).map(|c| t.get(r, c).powi(2)).sum::<f64>().sqrt();
        for c in 0..t.cols() {
            t.set(r, c, t.get(r, c) / norm);
        }
    }
    t
}

pub fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = vec![
        case("matmul", vec![random(&mut rng, 3, 4), random(&mut rng, 4, 5)], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            probe(t, y, 1)
        }),
        case(
            "affine",
            vec![random(&mut rng, 5, 3), random(&mut rng, 3, 4), random(&mut rng, 1, 4)],
            |t, v| {
                let y = t.affine(v[0], v[1], v[2]).unwrap();
                probe(t, y, 2)
            },
        ),
    ];
    for (name, shape) in [("add", (4, 3)), ("add row", (1, 3)), ("add column", (4, 1))] {
        out.push(case(
            name,
            vec![random(&mut rng, 4, 3), random(&mut rng, shape.0, shape.1)],
            |t, v| {
                let y = t.add(v[0], v[1]).unwrap();
                probe(t, y, 3)
            },
        ));
    }
    out.extend([
        case("sub", vec![random(&mut rng, 3, 3), random(&mut rng, 3, 3)], |t, v| {
            let y = t.sub(v[0], v[1]).unwrap();
            probe(t, y, 4)
        }),
        case("mul", vec![random(&mut rng, 3, 3), random(&mut rng, 3, 3)], |t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            probe(t, y, 5)
        }),
        case("scale", vec![random(&mut rng, 2, 5)], |t, v| {
            let y = t.scale(v[0], -2.5);
            probe(t, y, 6)
        }),
        case("relu", vec![away_from_zero(&mut rng, 4, 5)], |t, v| {
            let y = t.relu(v[0]);
            probe(t, y, 7)
        }),
        case("softmax_columns", vec![random(&mut rng, 6, 3)], |t, v| {
            let y = t.softmax_columns(v[0], 1.0);
            probe(t, y, 8)
        }),
        case("softmax_columns sharp", vec![random(&mut rng, 6, 3)], |t, v| {
            let y = t.softmax_columns(v[0], 7.5);
            probe(t, y, 9)
        }),
        case("sum", vec![random(&mut rng, 3, 4)], |t, v| {
            let y = t.mul(v[0], v[0]).unwrap();
            t.sum(y)
        }),
        case("mean", vec![random(&mut rng, 3, 4)], |t, v| {
            let y = t.mul(v[0], v[0]).unwrap();
            t.mean(y).unwrap()
        }),
        case("l2_normalize_rows", vec![away_from_zero(&mut rng, 5, 3)], |t, v| {
            let y = t.l2_normalize_rows(v[0]);
            probe(t, y, 10)
        }),
        case("masked_sum_of_squares", vec![random(&mut rng, 4, 3)], |t, v| {
            t.masked_sum_of_squares(v[0], &[1.0, 0.0, 1.0, 0.5]).unwrap()
        }),
        case("reshape", vec![random(&mut rng, 3, 4)], |t, v| {
            let y = t.reshape(v[0], 2, 6).unwrap();
            probe(t, y, 11)
        }),
        case("transpose", vec![random(&mut rng, 3, 4)], |t, v| {
            let y = t.transpose(v[0]);
            probe(t, y, 12)
        }),
        case("max_rows", vec![random(&mut rng, 5, 4)], |t, v| {
            let y = t.max_rows(v[0]).unwrap();
            probe(t, y, 13)
        }),
        composite(
            "soft selection into normalization",
            vec![random(&mut rng, 12, 5), random(&mut rng, 5, 2)],
            |t, v| {
                let s = soft_select(t, v[0], v[1], 3.0).unwrap();
                let y = t.l2_normalize_rows(s);
                probe(t, y, 14)
            },
        ),
        composite(
            "mlp with max fusion",
            vec![
                random(&mut rng, 6, 4),
                random(&mut rng, 4, 5),
                random(&mut rng, 1, 5),
                random(&mut rng, 5, 3),
            ],
            |t, v| {
                let h = t.affine(v[0], v[1], v[2]).unwrap();
                let h = t.relu(h);
                let m = t.max_rows(h).unwrap();
                let y = t.matmul(m, v[3]).unwrap();
                let y = t.l2_normalize_rows(y);
                probe(t, y, 15)
            },
        ),
    ]);

    let shape = NetShape {
        width: 8,
        extractor_layers: 2,
        head_layers: 2,
    };
    let net = NormalNetParams::init(shape, 3).unwrap();
    let (k, m, pixels) = (4, 2, 3);
    let target = unit_rows(away_from_zero(&mut rng, pixels, 3));
    out.push(composite(
        "selection, network and loss",
        vec![random(&mut rng, 6 * pixels, k), random(&mut rng, k, m)],
        move |t, v| {
            let vars = net.to_tape(t, false);
            let s = soft_select(t, v[0], v[1], 2.0).unwrap();
            let rows = selected_to_rows(t, s, pixels).unwrap();
            let pred = forward(t, &vars, rows, m, pixels).unwrap();
            let tgt = t.constant(target.clone());
            normal_loss(t, pred, tgt, &[1.0, 0.0, 1.0]).unwrap()
        },
    ));
    out
}
