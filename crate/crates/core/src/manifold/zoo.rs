//! Registry of benchmark manifolds built from graph functions over R^2
//! (plus two small R^1-based examples).
//!
//! Formulas, with `(a, b)` the base coordinates:
//!
//! | name              | graphs                                           | class     |
//! |-------------------|--------------------------------------------------|-----------|
//! | `parabola`        | `x^2` over R^1                                   | sublevel  |
//! | `diag-parabola`   | `(x, x^2)` over R^1                              | sublevel  |
//! | `paraboloid`      | `a^2 + b^2`                                      | sublevel  |
//! | `quartic`         | `a^4 + b^4`                                      | sublevel  |
//! | `mixed-quadratic` | `a^2 + ab + b^2`                                 | sublevel  |
//! | `exponential`     | `e^a + e^b`                                      | sublevel  |
//! | `abs`             | `sqrt(a^2 + 1e-6) + sqrt(b^2 + 1e-6)`            | sublevel  |
//! | `ackley`          | Ackley, radius smoothed by `1e-6`                | unknown   |
//! | `rastrigin`       | `20 + sum(x^2 - 10 cos 2 pi x)`                  | unknown   |
//! | `rosenbrock`      | `(1-a)^2 + 100 (b - a^2)^2`                      | unknown   |
//! | `himmelblau`      | `(a^2 + b - 11)^2 + (a + b^2 - 7)^2`             | unknown   |
//! | `quad-quad`       | `a^2 + b^2`, `(a-1)^2 + b^2`                     | sublevel  |
//! | `quad-qq`         | `a^2 + b^2`, `a^2 + b^4`                         | sublevel  |
//! | `e2-s2`           | `e^(a/2) + e^(b/2)`, `(a-b)^2 + (a+b)^2 / 2`     | sublevel  |
//! | `4d-4d`           | `a^4 + b^4 + a^2/2`, `(a+b)^4/8 + (a-b)^2/2`     | sublevel  |
//! | `bowl-sin`        | `a^2 + b^2`, `a^2 + b^2 + sin(a+b)/2`            | sublevel  |
//! | `exp-cosh`        | `e^(a/2) - b^2/2`, `cosh a - cosh b`             | unknown   |
//! | `ring-trig`       | `(a^2 + b^2 - 1)^2`, `sin a cos b`               | unknown   |
//! | `saddle-poly`     | `a^2 - b^2`, `(a^3 - 3ab^2)/3`                   | unknown   |
//! | `rosenbrock-pair` | `(1-a)^2 + 10(b-a^2)^2`, `(1-b)^2 + 10(a-b^2)^2` | unknown   |
//!
//! Lookup ignores case, `-` and `_`; `rastring` is accepted for `rastrigin`.

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Convexity, GraphFunction, GraphLift, ManifoldSpec};
use crate::error::{Error, Result};

const ABS_SMOOTHING: f64 = 1e-6;
const ACKLEY_SMOOTHING: f64 = 1e-6;

type Grad = [f64; 2];
type Hess = [[f64; 2]; 2];

/// Graph function with hand-written derivatives over a base of dimension 1 or 2.
#[derive(Clone, Copy)]
pub struct GraphFn {
    pub name: &'static str,
    pub base_dim: usize,
    value: fn(f64, f64) -> f64,
    grad: fn(f64, f64) -> Grad,
    hess: fn(f64, f64) -> Hess,
}

impl fmt::Debug for GraphFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GraphFn").field("name", &self.name).finish()
    }
}

impl GraphFn {
    fn args(&self, x: &[f64]) -> (f64, f64) {
        (x[0], if self.base_dim > 1 { x[1] } else { 0.0 })
    }
}

impl GraphFunction for GraphFn {
    fn value(&self, x: &[f64]) -> f64 {
        let (a, b) = self.args(x);
        (self.value)(a, b)
    }

    fn gradient(&self, x: &[f64]) -> Option<DVector<f64>> {
        let (a, b) = self.args(x);
        let g = (self.grad)(a, b);
        Some(DVector::from_fn(self.base_dim, |i, _| g[i]))
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let (a, b) = self.args(x);
        let h = (self.hess)(a, b);
        let k = self.base_dim;
        Some(DMatrix::from_fn(k, k, |i, j| h[i][j]))
    }
}

const fn g2(
    name: &'static str,
    value: fn(f64, f64) -> f64,
    grad: fn(f64, f64) -> Grad,
    hess: fn(f64, f64) -> Hess,
) -> GraphFn {
    GraphFn {
        name,
        base_dim: 2,
        value,
        grad,
        hess,
    }
}

const fn g1(
    name: &'static str,
    value: fn(f64, f64) -> f64,
    grad: fn(f64, f64) -> Grad,
    hess: fn(f64, f64) -> Hess,
) -> GraphFn {
    GraphFn {
        name,
        base_dim: 1,
        value,
        grad,
        hess,
    }
}

const LINE: GraphFn = g1("line", |a, _| a, |_, _| [1.0, 0.0], |_, _| [[0.0; 2]; 2]);

const SQUARE: GraphFn = g1(
    "square",
    |a, _| a * a,
    |a, _| [2.0 * a, 0.0],
    |_, _| [[2.0, 0.0], [0.0, 0.0]],
);

const PARABOLOID: GraphFn = g2(
    "paraboloid",
    |a, b| a * a + b * b,
    |a, b| [2.0 * a, 2.0 * b],
    |_, _| [[2.0, 0.0], [0.0, 2.0]],
);

const SHIFTED_PARABOLOID: GraphFn = g2(
    "shifted-paraboloid",
    |a, b| (a - 1.0).powi(2) + b * b,
    |a, b| [2.0 * (a - 1.0), 2.0 * b],
    |_, _| [[2.0, 0.0], [0.0, 2.0]],
);

const QUARTIC: GraphFn = g2(
    "quartic",
    |a, b| a.powi(4) + b.powi(4),
    |a, b| [4.0 * a.powi(3), 4.0 * b.powi(3)],
    |a, b| [[12.0 * a * a, 0.0], [0.0, 12.0 * b * b]],
);

const MIXED_QUADRATIC: GraphFn = g2(
    "mixed-quadratic",
    |a, b| a * a + a * b + b * b,
    |a, b| [2.0 * a + b, a + 2.0 * b],
    |_, _| [[2.0, 1.0], [1.0, 2.0]],
);

const EXPONENTIAL: GraphFn = g2(
    "exponential",
    |a, b| a.exp() + b.exp(),
    |a, b| [a.exp(), b.exp()],
    |a, b| [[a.exp(), 0.0], [0.0, b.exp()]],
);

fn smooth_abs(x: f64) -> (f64, f64, f64) {
    let s = (x * x + ABS_SMOOTHING).sqrt();
    (s, x / s, ABS_SMOOTHING / (s * s * s))
}

const ABS: GraphFn = g2(
    "abs",
    |a, b| smooth_abs(a).0 + smooth_abs(b).0,
    |a, b| [smooth_abs(a).1, smooth_abs(b).1],
    |a, b| [[smooth_abs(a).2, 0.0], [0.0, smooth_abs(b).2]],
);

fn ackley_value(a: f64, b: f64) -> f64 {
    let r = (0.5 * (a * a + b * b) + ACKLEY_SMOOTHING).sqrt();
    let c = 0.5 * ((2.0 * PI * a).cos() + (2.0 * PI * b).cos());
    -20.0 * (-0.2 * r).exp() - c.exp() + E + 20.0
}

fn ackley_grad(a: f64, b: f64) -> Grad {
    let r = (0.5 * (a * a + b * b) + ACKLEY_SMOOTHING).sqrt();
    let u = (-0.2 * r).exp();
    let ec = (0.5 * ((2.0 * PI * a).cos() + (2.0 * PI * b).cos())).exp();
    let d = |x: f64| 2.0 * x * u / r + PI * ec * (2.0 * PI * x).sin();
    [d(a), d(b)]
}

fn ackley_hess(a: f64, b: f64) -> Hess {
    let r = (0.5 * (a * a + b * b) + ACKLEY_SMOOTHING).sqrt();
    let u = (-0.2 * r).exp();
    let ec = (0.5 * ((2.0 * PI * a).cos() + (2.0 * PI * b).cos())).exp();
    let radial = -0.1 * u / (r * r) - 0.5 * u / (r * r * r);
    let x = [a, b];
    let mut h = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut v = 2.0 * x[i] * x[j] * radial;
            let (si, sj) = ((2.0 * PI * x[i]).sin(), (2.0 * PI * x[j]).sin());
            if i == j {
                v += 2.0 * u / r;
                v += PI * PI * ec * (2.0 * (2.0 * PI * x[i]).cos() - si * si);
            } else {
                v -= PI * PI * ec * si * sj;
            }
            h[i][j] = v;
        }
    }
    h
}

const ACKLEY: GraphFn = g2("ackley", ackley_value, ackley_grad, ackley_hess);

const RASTRIGIN: GraphFn = g2(
    "rastrigin",
    |a, b| {
        20.0 + a * a - 10.0 * (2.0 * PI * a).cos() + b * b - 10.0 * (2.0 * PI * b).cos()
    },
    |a, b| {
        let d = |x: f64| 2.0 * x + 20.0 * PI * (2.0 * PI * x).sin();
        [d(a), d(b)]
    },
    |a, b| {
        let d = |x: f64| 2.0 + 40.0 * PI * PI * (2.0 * PI * x).cos();
        [[d(a), 0.0], [0.0, d(b)]]
    },
);

const ROSENBROCK: GraphFn = g2(
    "rosenbrock",
    |a, b| (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
    |a, b| {
        [
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ]
    },
    |a, b| {
        [
            [2.0 - 400.0 * b + 1200.0 * a * a, -400.0 * a],
            [-400.0 * a, 200.0],
        ]
    },
);

const HIMMELBLAU: GraphFn = g2(
    "himmelblau",
    |a, b| (a * a + b - 11.0).powi(2) + (a + b * b - 7.0).powi(2),
    |a, b| {
        let p = a * a + b - 11.0;
        let q = a + b * b - 7.0;
        [4.0 * a * p + 2.0 * q, 2.0 * p + 4.0 * b * q]
    },
    |a, b| {
        let p = a * a + b - 11.0;
        let q = a + b * b - 7.0;
        [
            [4.0 * p + 8.0 * a * a + 2.0, 4.0 * (a + b)],
            [4.0 * (a + b), 2.0 + 4.0 * q + 8.0 * b * b],
        ]
    },
);

const QUAD_QUARTIC: GraphFn = g2(
    "quad-quartic",
    |a, b| a * a + b.powi(4),
    |a, b| [2.0 * a, 4.0 * b.powi(3)],
    |_, b| [[2.0, 0.0], [0.0, 12.0 * b * b]],
);

const HALF_EXP: GraphFn = g2(
    "half-exp",
    |a, b| (0.5 * a).exp() + (0.5 * b).exp(),
    |a, b| [0.5 * (0.5 * a).exp(), 0.5 * (0.5 * b).exp()],
    |a, b| [[0.25 * (0.5 * a).exp(), 0.0], [0.0, 0.25 * (0.5 * b).exp()]],
);

const SKEW_SQUARE: GraphFn = g2(
    "skew-square",
    |a, b| (a - b).powi(2) + 0.5 * (a + b).powi(2),
    |a, b| [3.0 * a - b, 3.0 * b - a],
    |_, _| [[3.0, -1.0], [-1.0, 3.0]],
);

const QUARTIC_BOWL: GraphFn = g2(
    "quartic-bowl",
    |a, b| a.powi(4) + b.powi(4) + 0.5 * a * a,
    |a, b| [4.0 * a.powi(3) + a, 4.0 * b.powi(3)],
    |a, b| [[12.0 * a * a + 1.0, 0.0], [0.0, 12.0 * b * b]],
);

const ROTATED_QUARTIC: GraphFn = g2(
    "rotated-quartic",
    |a, b| (a + b).powi(4) / 8.0 + 0.5 * (a - b).powi(2),
    |a, b| {
        let s3 = 0.5 * (a + b).powi(3);
        [s3 + (a - b), s3 - (a - b)]
    },
    |a, b| {
        let s2 = 1.5 * (a + b).powi(2);
        [[s2 + 1.0, s2 - 1.0], [s2 - 1.0, s2 + 1.0]]
    },
);

const BOWL_SIN: GraphFn = g2(
    "bowl-sin",
    |a, b| a * a + b * b + 0.5 * (a + b).sin(),
    |a, b| {
        let c = 0.5 * (a + b).cos();
        [2.0 * a + c, 2.0 * b + c]
    },
    |a, b| {
        let s = 0.5 * (a + b).sin();
        [[2.0 - s, -s], [-s, 2.0 - s]]
    },
);

const EXP_MINUS_SQUARE: GraphFn = g2(
    "exp-minus-square",
    |a, b| (0.5 * a).exp() - 0.5 * b * b,
    |a, b| [0.5 * (0.5 * a).exp(), -b],
    |a, _| [[0.25 * (0.5 * a).exp(), 0.0], [0.0, -1.0]],
);

const COSH_DIFF: GraphFn = g2(
    "cosh-diff",
    |a, b| a.cosh() - b.cosh(),
    |a, b| [a.sinh(), -b.sinh()],
    |a, b| [[a.cosh(), 0.0], [0.0, -b.cosh()]],
);

const RING: GraphFn = g2(
    "ring",
    |a, b| (a * a + b * b - 1.0).powi(2),
    |a, b| {
        let r = a * a + b * b - 1.0;
        [4.0 * a * r, 4.0 * b * r]
    },
    |a, b| {
        let r = a * a + b * b - 1.0;
        [
            [4.0 * r + 8.0 * a * a, 8.0 * a * b],
            [8.0 * a * b, 4.0 * r + 8.0 * b * b],
        ]
    },
);

const TRIG: GraphFn = g2(
    "trig",
    |a, b| a.sin() * b.cos(),
    |a, b| [a.cos() * b.cos(), -a.sin() * b.sin()],
    |a, b| {
        let v = -a.sin() * b.cos();
        let c = -a.cos() * b.sin();
        [[v, c], [c, v]]
    },
);

const SADDLE: GraphFn = g2(
    "saddle",
    |a, b| a * a - b * b,
    |a, b| [2.0 * a, -2.0 * b],
    |_, _| [[2.0, 0.0], [0.0, -2.0]],
);

const MONKEY_SADDLE: GraphFn = g2(
    "monkey-saddle",
    |a, b| (a.powi(3) - 3.0 * a * b * b) / 3.0,
    |a, b| [a * a - b * b, -2.0 * a * b],
    |a, b| [[2.0 * a, -2.0 * b], [-2.0 * b, -2.0 * a]],
);

const ROSENBROCK_A: GraphFn = g2(
    "rosenbrock-a",
    |a, b| (1.0 - a).powi(2) + 10.0 * (b - a * a).powi(2),
    |a, b| [-2.0 * (1.0 - a) - 40.0 * a * (b - a * a), 20.0 * (b - a * a)],
    |a, b| [[2.0 - 40.0 * b + 120.0 * a * a, -40.0 * a], [-40.0 * a, 20.0]],
);

const ROSENBROCK_B: GraphFn = g2(
    "rosenbrock-b",
    |a, b| (1.0 - b).powi(2) + 10.0 * (a - b * b).powi(2),
    |a, b| [20.0 * (a - b * b), -2.0 * (1.0 - b) - 40.0 * b * (a - b * b)],
    |a, b| [[20.0, -40.0 * b], [-40.0 * b, 2.0 - 40.0 * a + 120.0 * b * b]],
);

struct Entry {
    name: &'static str,
    graphs: &'static [GraphFn],
    convexity: Convexity,
}

use Convexity::{ConvexSublevel as Sub, Unknown};

const REGISTRY: &[Entry] = &[
    Entry { name: "parabola", graphs: &[SQUARE], convexity: Sub },
    Entry { name: "diag-parabola", graphs: &[LINE, SQUARE], convexity: Sub },
    Entry { name: "paraboloid", graphs: &[PARABOLOID], convexity: Sub },
    Entry { name: "quartic", graphs: &[QUARTIC], convexity: Sub },
    Entry { name: "mixed-quadratic", graphs: &[MIXED_QUADRATIC], convexity: Sub },
    Entry { name: "exponential", graphs: &[EXPONENTIAL], convexity: Sub },
    Entry { name: "abs", graphs: &[ABS], convexity: Sub },
    Entry { name: "ackley", graphs: &[ACKLEY], convexity: Unknown },
    Entry { name: "rastrigin", graphs: &[RASTRIGIN], convexity: Unknown },
    Entry { name: "rosenbrock", graphs: &[ROSENBROCK], convexity: Unknown },
    Entry { name: "himmelblau", graphs: &[HIMMELBLAU], convexity: Unknown },
    Entry { name: "quad-quad", graphs: &[PARABOLOID, SHIFTED_PARABOLOID], convexity: Sub },
    Entry { name: "quad-qq", graphs: &[PARABOLOID, QUAD_QUARTIC], convexity: Sub },
    Entry { name: "e2-s2", graphs: &[HALF_EXP, SKEW_SQUARE], convexity: Sub },
    Entry { name: "4d-4d", graphs: &[QUARTIC_BOWL, ROTATED_QUARTIC], convexity: Sub },
    Entry { name: "bowl-sin", graphs: &[PARABOLOID, BOWL_SIN], convexity: Sub },
    Entry { name: "exp-cosh", graphs: &[EXP_MINUS_SQUARE, COSH_DIFF], convexity: Unknown },
    Entry { name: "ring-trig", graphs: &[RING, TRIG], convexity: Unknown },
    Entry { name: "saddle-poly", graphs: &[SADDLE, MONKEY_SADDLE], convexity: Unknown },
    Entry {
        name: "rosenbrock-pair",
        graphs: &[ROSENBROCK_A, ROSENBROCK_B],
        convexity: Unknown,
    },
];

const ALIASES: &[(&str, &str)] = &[("rastring", "rastrigin")];

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| *c != '-' && *c != '_')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Canonical registry names in registry order.
pub fn registry_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.name).collect()
}

/// Looks up a benchmark manifold by name.
pub fn registry_get(name: &str) -> Result<ManifoldSpec> {
    let key = normalize(name);
    let key = ALIASES
        .iter()
        .find(|(alias, _)| normalize(alias) == key)
        .map(|(_, target)| normalize(target))
        .unwrap_or(key);
    let entry = REGISTRY
        .iter()
        .find(|e| normalize(e.name) == key)
        .ok_or_else(|| Error::UnknownManifold {
            name: name.to_string(),
            available: registry_names().iter().map(|s| s.to_string()).collect(),
        })?;
    let base_dim = entry.graphs[0].base_dim;
    let lift = GraphLift {
        base_dim,
        graphs: entry
            .graphs
            .iter()
            .map(|g| Arc::new(*g) as Arc<dyn GraphFunction>)
            .collect(),
    };
    ManifoldSpec::from_lift(entry.name, lift, vec![entry.convexity; entry.graphs.len()])
}
