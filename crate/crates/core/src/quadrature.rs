//! Composite Gauss–Legendre rules and diagonal-singular kernel integration.
//!
//! The kernels that appear throughout the crate have the form
//! `|u − v|^β` with `β ∈ (−1, 0)`. Integrating `F(u, v)|u − v|^β` over a
//! rectangle is reduced, via `w = u − v`, to one-dimensional integrals
//! `∫_0^c w^β G(w) dw` with `G` smooth, and those are handed to a
//! [`DiagonalRule`] picked by name from a small registry.

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendreRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendreRule {
    pub fn new(n: usize) -> Self {
        let n = n.max(2);
        let gl = GaussLegendre::new(n).expect("Gauss-Legendre degree >= 2");
        let (nodes, weights) = gl.as_node_weight_pairs().iter().copied().unzip();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule with `panels` equal panels.
    pub fn composite(&self, a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + h * k as f64;
                let hi = if k + 1 == panels { b } else { lo + h };
                self.integrate(lo, hi, &mut f)
            })
            .sum()
    }
}

/// How the `w = 0` endpoint singularity of `w^β` is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SingularityPolicy {
    SubtractAndTransform,
    GradedMesh,
}

impl SingularityPolicy {
    pub fn name(self) -> &'static str {
        match self {
            Self::SubtractAndTransform => "subtract-and-transform",
            Self::GradedMesh => "graded-mesh",
        }
    }

    pub fn rule(self) -> &'static dyn DiagonalRule {
        diagonal_rule(self.name()).expect("every policy is registered")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureScheme {
    pub panel_count: usize,
    pub nodes_per_panel: usize,
    pub singularity_policy: SingularityPolicy,
    pub refinement_level: u32,
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        Self {
            panel_count: 16,
            nodes_per_panel: 12,
            singularity_policy: SingularityPolicy::SubtractAndTransform,
            refinement_level: 0,
        }
    }
}

impl QuadratureScheme {
    pub fn with_policy(mut self, policy: SingularityPolicy) -> Self {
        self.singularity_policy = policy;
        self
    }

    /// Next refinement: twice the panels.
    pub fn refined(&self) -> Self {
        Self {
            panel_count: self.panel_count * 2,
            refinement_level: self.refinement_level + 1,
            ..*self
        }
    }

    pub fn rule(&self) -> GaussLegendreRule {
        GaussLegendreRule::new(self.nodes_per_panel)
    }
}

/// A strategy for `∫_0^c w^β g(w) dw` with `β > −1` and `g` smooth on `[0, c]`.
pub trait DiagonalRule: Send + Sync {
    fn name(&self) -> &'static str;

    fn integrate_power(
        &self,
        beta: f64,
        c: f64,
        g: &mut dyn FnMut(f64) -> f64,
        scheme: &QuadratureScheme,
    ) -> f64;
}

/// Pulls `g(0)` out analytically, then maps `t = w^{β+1}` so the remainder
/// is integrated against Lebesgue measure.
pub struct SubtractAndTransform;

impl DiagonalRule for SubtractAndTransform {
    fn name(&self) -> &'static str {
        "subtract-and-transform"
    }

    fn integrate_power(
        &self,
        beta: f64,
        c: f64,
        g: &mut dyn FnMut(f64) -> f64,
        scheme: &QuadratureScheme,
    ) -> f64 {
        let a = beta + 1.0;
        let g0 = g(0.0);
        let exact = g0 * c.powf(a) / a;
        let rule = scheme.rule();
        let p = 1.0 / a;
        let remainder = rule.composite(0.0, c.powf(a), scheme.panel_count, |t| {
            let w = t.powf(p).min(c);
            g(w) - g0
        });
        exact + remainder / a
    }
}

/// Geometrically graded panels `[cσ^{k+1}, cσ^k]` toward `w = 0`, one per
/// refinement unit, with the innermost `[0, cσ^P]` left to plain Gauss.
pub struct GradedMesh {
    pub ratio: f64,
}

impl DiagonalRule for GradedMesh {
    fn name(&self) -> &'static str {
        "graded-mesh"
    }

    fn integrate_power(
        &self,
        beta: f64,
        c: f64,
        g: &mut dyn FnMut(f64) -> f64,
        scheme: &QuadratureScheme,
    ) -> f64 {
        let rule = scheme.rule();
        let mut total = 0.0;
        let mut hi = c;
        for _ in 0..scheme.panel_count {
            let lo = hi * self.ratio;
            total += rule.integrate(lo, hi, |w| w.powf(beta) * g(w));
            hi = lo;
        }
        total + rule.integrate(0.0, hi, |w| w.powf(beta) * g(w))
    }
}

static SUBTRACT_AND_TRANSFORM: SubtractAndTransform = SubtractAndTransform;
static GRADED_MESH: GradedMesh = GradedMesh { ratio: 0.15 };

static DIAGONAL_RULES: [&dyn DiagonalRule; 2] = [&SUBTRACT_AND_TRANSFORM, &GRADED_MESH];

/// Looks up a registered diagonal rule by name.
pub fn diagonal_rule(name: &str) -> Option<&'static dyn DiagonalRule> {
    DIAGONAL_RULES.iter().copied().find(|r| r.name() == name)
}

pub fn diagonal_rule_names() -> Vec<&'static str> {
    DIAGONAL_RULES.iter().map(|r| r.name()).collect()
}

/// Axis-aligned rectangle `[u_lo, u_hi] × [v_lo, v_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub u: (f64, f64),
    pub v: (f64, f64),
}

impl Rect {
    pub fn square(lo: f64, hi: f64) -> Self {
        Self { u: (lo, hi), v: (lo, hi) }
    }
}

/// `∬_rect F(u, v) |u − v|^β du dv` for `β > −1` and `F` smooth on the rectangle.
pub fn integrate_singular_rect(
    rect: Rect,
    beta: f64,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
    scheme: &QuadratureScheme,
) -> f64 {
    let (a1, b1) = rect.u;
    let (a2, b2) = rect.v;
    if b1 <= a1 || b2 <= a2 {
        return 0.0;
    }
    let rule = scheme.rule();
    let inner_panels = (scheme.panel_count / 2).max(2);
    // inner integral along the diagonal direction at offset w
    let g = |w: f64| -> f64 {
        let lo = a2.max(a1 - w);
        let hi = b2.min(b1 - w);
        if hi <= lo {
            return 0.0;
        }
        rule.composite(lo, hi, inner_panels, |v| f(v + w, v))
    };

    let (w_min, w_max) = (a1 - b2, b1 - a2);
    let mut breaks = vec![w_min, w_max, a1 - a2, b1 - b2];
    if w_min < 0.0 && w_max > 0.0 {
        breaks.push(0.0);
    }
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breaks.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * (1.0 + y.abs()));

    let diag = scheme.singularity_policy.rule();
    let mut total = 0.0;
    for pair in breaks.windows(2) {
        let (wl, wr) = (pair[0], pair[1]);
        if wr - wl <= 0.0 {
            continue;
        }
        if wl == 0.0 {
            total += diag.integrate_power(beta, wr, &mut |w| g(w), scheme);
        } else if wr == 0.0 {
            total += diag.integrate_power(beta, -wl, &mut |t| g(-t), scheme);
        } else {
            total += rule.composite(wl, wr, scheme.panel_count, |w| w.abs().powf(beta) * g(w));
        }
    }
    total
}

/// A quadrature node on `[ε_L, c]` tagged with the dyadic shell it lies in:
/// bucket 0 is `[ε_0, c]`, bucket `k + 1` is `[ε_{k+1}, ε_k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderNode {
    pub w: f64,
    pub weight: f64,
    pub bucket: usize,
}

/// Nodes for `∫_{ε_L}^{c} f(w) dw` with `ε_k = 2^{-k} ε_0`. Every shell is
/// integrated in `ln w`, which keeps power-law integrands smooth whatever
/// their exponent.
pub fn dyadic_nodes(eps0: f64, c: f64, levels: usize, scheme: &QuadratureScheme) -> Vec<LadderNode> {
    let rule = scheme.rule();
    let mut out = Vec::new();
    if c > eps0 {
        let panels = scheme.panel_count.max(1);
        let (la, lb) = (eps0.ln(), c.ln());
        let h = (lb - la) / panels as f64;
        for p in 0..panels {
            let lo = la + h * p as f64;
            for (s, wt) in rule.mapped(lo, lo + h) {
                let w = s.exp();
                out.push(LadderNode { w, weight: wt * w, bucket: 0 });
            }
        }
    }
    for k in 0..levels {
        let hi = eps0 * 0.5f64.powi(k as i32);
        for (s, wt) in rule.mapped((0.5 * hi).ln(), hi.ln()) {
            let w = s.exp();
            out.push(LadderNode { w, weight: wt * w, bucket: k + 1 });
        }
    }
    out
}

/// Cumulative sums over buckets: entry `k` integrates over `[ε_k, c]`.
pub fn cumulative_by_bucket(levels: usize, contributions: impl IntoIterator<Item = (usize, f64)>) -> Vec<f64> {
    let mut per = vec![0.0; levels + 1];
    for (b, v) in contributions {
        per[b] += v;
    }
    let mut acc = 0.0;
    per.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Truncated integrals `∫_{ε_k}^{c} f(w) dw` for `k = 0..=levels`. The
/// sequence is cumulative, so divergence shows up as unbounded growth.
pub fn dyadic_truncations(
    eps0: f64,
    c: f64,
    levels: usize,
    scheme: &QuadratureScheme,
    f: &(dyn Fn(f64) -> f64 + Sync),
) -> Vec<f64> {
    use rayon::prelude::*;
    let nodes = dyadic_nodes(eps0, c, levels, scheme);
    let vals: Vec<(usize, f64)> = nodes.par_iter().map(|n| (n.bucket, n.weight * f(n.w))).collect();
    cumulative_by_bucket(levels, vals)
}
