//! Gaussian fuzzy-rule policies.
//!
//! A policy with `C` rules over a `D`-dimensional state is encoded as a flat
//! vector of length `(2D+1)·C + 1`: for each rule its centers, then its
//! widths, then its output weight, followed by the shared slope `α`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl_eval::Policy;
use crate::state::State;

/// Smallest admissible membership width.
pub const SIGMA_MIN: f64 = 1e-3;
/// Upper bound of the slope search interval.
pub const SLOPE_MAX: f64 = 10.0;
/// Rule outputs are searched in `[-OUTPUT_BOUND, OUTPUT_BOUND]`.
pub const OUTPUT_BOUND: f64 = 5.0;
/// Center search box is this multiple of the state-region extent.
pub const CENTER_EXTENT_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyRule {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub output: f64,
}

impl FuzzyRule {
    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    /// Sum of the per-dimension Gaussian exponents; `membership = exp(this)`.
    #[inline]
    fn log_membership(&self, s: &[f64]) -> f64 {
        let mut e = 0.0;
        for ((c, w), x) in self.centers.iter().zip(&self.widths).zip(s) {
            let d = c - x;
            e -= d * d / (2.0 * w * w);
        }
        e
    }
}

/// Activation grade of `rule` for state `s`, in `(0, 1]`.
pub fn membership(rule: &FuzzyRule, s: &State) -> Result<f64> {
    if rule.dim() != s.dim() {
        return Err(Error::Dimension {
            expected: rule.dim(),
            found: s.dim(),
        });
    }
    Ok(rule
        .centers
        .iter()
        .zip(&rule.widths)
        .zip(s.as_slice())
        .map(|((c, w), x)| (-(c - x) * (c - x) / (2.0 * w * w)).exp())
        .product())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyPolicyParams {
    pub rules: Vec<FuzzyRule>,
    /// Slope `α` applied inside the tanh.
    pub slope: f64,
    /// Maps the tanh output onto the benchmark's force range.
    pub scale: f64,
}

impl FuzzyPolicyParams {
    pub fn dim(&self) -> usize {
        self.rules.first().map_or(0, FuzzyRule::dim)
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    /// Membership-weighted mean of rule outputs, before slope and tanh.
    pub fn defuzzify(&self, s: &State) -> f64 {
        // Normalizing by the largest exponent leaves the ratio unchanged and
        // keeps the denominator ≥ 1 far away from every center.
        let mut logs = [0.0f64; 64];
        let mut buf;
        let logs: &mut [f64] = if self.rules.len() <= logs.len() {
            &mut logs[..self.rules.len()]
        } else {
            buf = vec![0.0; self.rules.len()];
            &mut buf
        };
        let mut max_log = f64::NEG_INFINITY;
        for (l, rule) in logs.iter_mut().zip(&self.rules) {
            *l = rule.log_membership(s.as_slice());
            max_log = max_log.max(*l);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (l, rule) in logs.iter().zip(&self.rules) {
            let m = (l - max_log).exp();
            num += m * rule.output;
            den += m;
        }
        num / den
    }

    /// Defuzzified, squashed and scaled action.
    pub fn output(&self, s: &State) -> f64 {
        self.scale * (self.slope * self.defuzzify(s)).tanh()
    }

    /// Flat parameter vector in rule-major order, slope last.
    pub fn encode(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(encoded_len(self.dim(), self.rules.len()));
        for rule in &self.rules {
            x.extend_from_slice(&rule.centers);
            x.extend_from_slice(&rule.widths);
            x.push(rule.output);
        }
        x.push(self.slope);
        x
    }

    /// Inverse of [`encode`](Self::encode). Widths are mapped through
    /// `max(|σ|, SIGMA_MIN)`.
    pub fn decode(x: &[f64], dim: usize, rules: usize, scale: f64) -> Result<Self> {
        let expected = encoded_len(dim, rules);
        if x.len() != expected || rules == 0 {
            return Err(Error::Contract(format!(
                "parameter vector has length {}, expected {expected} for D={dim}, C={rules}",
                x.len()
            )));
        }
        let stride = 2 * dim + 1;
        let rules = x[..x.len() - 1]
            .chunks_exact(stride)
            .map(|chunk| FuzzyRule {
                centers: chunk[..dim].to_vec(),
                widths: chunk[dim..2 * dim]
                    .iter()
                    .map(|w| w.abs().max(SIGMA_MIN))
                    .collect(),
                output: chunk[2 * dim],
            })
            .collect();
        Ok(FuzzyPolicyParams {
            rules,
            slope: x[x.len() - 1],
            scale,
        })
    }
}

impl Policy for FuzzyPolicyParams {
    fn action(&self, s: &State) -> f64 {
        self.output(s)
    }
}

/// `(2D+1)·C + 1`
pub fn encoded_len(dim: usize, rules: usize) -> usize {
    (2 * dim + 1) * rules + 1
}

/// Builds a policy from the free half of the rules and their mirror images
/// `(-c, σ, -o)`. The result is odd: `π(-s) = -π(s)`.
pub fn expand_symmetric(half: &[f64], dim: usize, scale: f64) -> Result<FuzzyPolicyParams> {
    let stride = 2 * dim + 1;
    if half.is_empty() || !(half.len() - 1).is_multiple_of(stride) {
        return Err(Error::Contract(format!(
            "symmetric half vector length {} is not (2D+1)·k + 1 for D={dim}",
            half.len()
        )));
    }
    let free = (half.len() - 1) / stride;
    let mut params = FuzzyPolicyParams::decode(half, dim, free, scale)?;
    let mirrored: Vec<FuzzyRule> = params
        .rules
        .iter()
        .map(|r| FuzzyRule {
            centers: r.centers.iter().map(|c| -c).collect(),
            widths: r.widths.clone(),
            output: -r.output,
        })
        .collect();
    params.rules.extend(mirrored);
    Ok(params)
}

/// Shape of the PSO search vector for a fuzzy policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleLayout {
    pub dim: usize,
    /// Total rule count `C`, including mirrored rules.
    pub rules: usize,
    pub symmetric: bool,
}

impl RuleLayout {
    pub fn new(dim: usize, rules: usize, symmetric: bool) -> Result<Self> {
        if rules == 0 {
            return Err(Error::Config("a policy needs at least one rule".into()));
        }
        if symmetric && !rules.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "symmetric policies need an even rule count, got {rules}"
            )));
        }
        Ok(RuleLayout {
            dim,
            rules,
            symmetric,
        })
    }

    /// Rules whose parameters are searched directly.
    pub fn free_rules(&self) -> usize {
        if self.symmetric {
            self.rules / 2
        } else {
            self.rules
        }
    }

    /// Length of the search vector.
    pub fn free_len(&self) -> usize {
        encoded_len(self.dim, self.free_rules())
    }

    pub fn decode(&self, x: &[f64], scale: f64) -> Result<FuzzyPolicyParams> {
        if self.symmetric {
            if x.len() != self.free_len() {
                return Err(Error::Contract(format!(
                    "search vector has length {}, expected {}",
                    x.len(),
                    self.free_len()
                )));
            }
            expand_symmetric(x, self.dim, scale)
        } else {
            FuzzyPolicyParams::decode(x, self.dim, self.rules, scale)
        }
    }

    /// Search box for the free vector given the nominal state region.
    ///
    /// Centers span 1.5× each dimension's extent around its midpoint, widths
    /// lie in `[SIGMA_MIN, extent]`, outputs in `[-5, 5]` and the slope in
    /// `[SIGMA_MIN, 10]`.
    pub fn search_bounds(&self, region: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
        if region.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: region.len(),
            });
        }
        let mut lo = Vec::with_capacity(self.free_len());
        let mut hi = Vec::with_capacity(self.free_len());
        for _ in 0..self.free_rules() {
            for &(a, b) in region {
                let mid = 0.5 * (a + b);
                let half = 0.5 * CENTER_EXTENT_FACTOR * (b - a);
                lo.push(mid - half);
                hi.push(mid + half);
            }
            for &(a, b) in region {
                lo.push(SIGMA_MIN);
                hi.push(b - a);
            }
            lo.push(-OUTPUT_BOUND);
            hi.push(OUTPUT_BOUND);
        }
        lo.push(SIGMA_MIN);
        hi.push(SLOPE_MAX);
        Ok((lo, hi))
    }
}

/// One plotted state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub unit: String,
    pub range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub text: String,
    pub svg: String,
}

const PROFILE_WIDTH: usize = 48;
const SHADES: &[u8] = b" .:-=+*#%@";

/// Text table and SVG figure of a rule set: per rule and dimension the
/// Gaussian profile with its center and width, then each sample state's
/// activation per rule and the resulting action.
pub fn render_rules(params: &FuzzyPolicyParams, axes: &[Axis], samples: &[State]) -> Result<Rendering> {
    let dim = params.dim();
    if axes.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            found: axes.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|s| s.dim() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            found: bad.dim(),
        });
    }
    Ok(Rendering {
        text: render_text(params, axes, samples),
        svg: render_svg(params, axes, samples),
    })
}

fn gauss(c: f64, w: f64, x: f64) -> f64 {
    (-(c - x) * (c - x) / (2.0 * w * w)).exp()
}

fn axis_title(axis: &Axis) -> String {
    if axis.unit.is_empty() {
        axis.name.clone()
    } else {
        format!("{} [{}]", axis.name, axis.unit)
    }
}

fn render_text(params: &FuzzyPolicyParams, axes: &[Axis], samples: &[State]) -> String {
    let mut out = String::new();
    let name_width = axes.iter().map(|a| axis_title(a).len()).max().unwrap_or(0);
    let _ = writeln!(
        out,
        "fuzzy policy: {} rules, {} inputs, slope {:.4}, action scale {}",
        params.rule_count(),
        axes.len(),
        params.slope,
        params.scale
    );
    for (i, rule) in params.rules.iter().enumerate() {
        let sign = if rule.output >= 0.0 { '+' } else { '-' };
        let _ = writeln!(out, "\nrule {}: output {:+.4} ({sign})", i + 1, rule.output);
        for (j, axis) in axes.iter().enumerate() {
            let (lo, hi) = axis.range;
            let profile: String = (0..PROFILE_WIDTH)
                .map(|k| {
                    let x = lo + (hi - lo) * (k as f64 + 0.5) / PROFILE_WIDTH as f64;
                    let g = gauss(rule.centers[j], rule.widths[j], x);
                    let level = ((g * (SHADES.len() - 1) as f64).round() as usize).min(SHADES.len() - 1);
                    SHADES[level] as char
                })
                .collect();
            let _ = writeln!(
                out,
                "  {:<name_width$}  c={:+.4}  sigma={:.4}  |{profile}|",
                axis_title(axis),
                rule.centers[j],
                rule.widths[j],
            );
        }
    }
    if !samples.is_empty() {
        let _ = writeln!(out, "\nexamples:");
        for s in samples {
            let coords: Vec<String> = s.as_slice().iter().map(|v| format!("{v:+.3}")).collect();
            let _ = write!(out, "  s=({})", coords.join(", "));
            for (i, rule) in params.rules.iter().enumerate() {
                let m = membership(rule, s).unwrap_or(f64::NAN);
                let _ = write!(out, "  r{}={:.4}", i + 1, m);
            }
            let _ = writeln!(out, "  -> a={:+.4}", params.output(s));
        }
    }
    out
}

fn render_svg(params: &FuzzyPolicyParams, axes: &[Axis], samples: &[State]) -> String {
    const CELL_W: f64 = 200.0;
    const CELL_H: f64 = 90.0;
    const LEFT: f64 = 110.0;
    const TOP: f64 = 40.0;
    const ROW_H: f64 = 18.0;
    let dim = axes.len();
    let rules = params.rule_count();
    let width = LEFT + CELL_W * dim as f64 + 20.0;
    let height = TOP + CELL_H * rules as f64 + 30.0 + ROW_H * samples.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (j, axis) in axes.iter().enumerate() {
        let x = LEFT + CELL_W * j as f64 + CELL_W / 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP - 20.0,
            xml_escape(&axis_title(axis))
        );
    }
    for (i, rule) in params.rules.iter().enumerate() {
        let y0 = TOP + CELL_H * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="8" y="{:.1}">rule {}</text><text x="8" y="{:.1}">o = {:+.3}</text>"#,
            y0 + CELL_H / 2.0 - 6.0,
            i + 1,
            y0 + CELL_H / 2.0 + 8.0,
            rule.output
        );
        for (j, axis) in axes.iter().enumerate() {
            let x0 = LEFT + CELL_W * j as f64 + 10.0;
            let w = CELL_W - 20.0;
            let base = y0 + CELL_H - 15.0;
            let h = CELL_H - 25.0;
            let (lo, hi) = axis.range;
            let px = |v: f64| x0 + (v - lo) / (hi - lo) * w;
            let _ = writeln!(
                svg,
                r##"<line x1="{x0:.1}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="#444"/>"##,
                x0 + w
            );
            for s in samples {
                let g = gauss(rule.centers[j], rule.widths[j], s[j]);
                let sx = px(s[j]).clamp(x0, x0 + w);
                let _ = writeln!(
                    svg,
                    r##"<rect x="{x0:.1}" y="{:.1}" width="{w:.1}" height="{:.1}" fill="#999" fill-opacity="0.15"/><line x1="{sx:.1}" y1="{base:.1}" x2="{sx:.1}" y2="{:.1}" stroke="#d22"/>"##,
                    base - g * h,
                    g * h,
                    base - h
                );
            }
            let points: Vec<String> = (0..=60)
                .map(|k| {
                    let v = lo + (hi - lo) * k as f64 / 60.0;
                    format!("{:.1},{:.1}", px(v), base - gauss(rule.centers[j], rule.widths[j], v) * h)
                })
                .collect();
            let _ = writeln!(
                svg,
                r##"<polyline fill="none" stroke="#1f5fbf" stroke-width="1.5" points="{}"/>"##,
                points.join(" ")
            );
            let _ = writeln!(
                svg,
                r##"<text x="{x0:.1}" y="{:.1}" fill="#555">c={:+.3} sigma={:.3}</text>"##,
                base + 12.0,
                rule.centers[j],
                rule.widths[j]
            );
        }
    }
    let mut y = TOP + CELL_H * rules as f64 + 20.0;
    for s in samples {
        let coords: Vec<String> = s.as_slice().iter().map(|v| format!("{v:+.2}")).collect();
        let grades: Vec<String> = params
            .rules
            .iter()
            .map(|r| format!("{:.3}", membership(r, s).unwrap_or(f64::NAN)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<text x="8" y="{y:.1}">s=({}) activations [{}] action {:+.3}</text>"#,
            coords.join(", "),
            grades.join(", "),
            params.output(s)
        );
        y += ROW_H;
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rule(c: &[f64], w: &[f64], o: f64) -> FuzzyRule {
        FuzzyRule {
            centers: c.to_vec(),
            widths: w.to_vec(),
            output: o,
        }
    }

    fn st(v: &[f64]) -> State {
        State::from_slice(v)
    }

    #[test]
    fn membership_examples() {
        let r = rule(&[0.3, -1.0], &[0.5, 2.0], 1.0);
        assert_eq!(membership(&r, &st(&[0.3, -1.0])).unwrap(), 1.0);
        let r1 = rule(&[0.0], &[1.0], 0.0);
        assert!((membership(&r1, &st(&[1.0])).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
        let r2 = rule(&[1.0, 2.0], &[0.5, 0.25], 0.0);
        let m = membership(&r2, &st(&[1.5, 1.75])).unwrap();
        assert!((m - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(membership(&r2, &st(&[1.0])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_rule_output_ignores_state() {
        let p = FuzzyPolicyParams {
            rules: vec![rule(&[0.0, 0.0], &[0.1, 0.1], 0.7)],
            slope: 1.3,
            scale: 1.0,
        };
        for s in [st(&[0.0, 0.0]), st(&[5.0, -3.0]), st(&[1e3, 1e3])] {
            assert!((p.output(&s) - (1.3f64 * 0.7).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_membership_averages_outputs() {
        let p = FuzzyPolicyParams {
            rules: vec![rule(&[-1.0], &[1.0], 0.4), rule(&[1.0], &[1.0], -1.0)],
            slope: 2.0,
            scale: 1.0,
        };
        let expected = (2.0f64 * (0.4 - 1.0) / 2.0).tanh();
        assert!((p.output(&st(&[0.0])) - expected).abs() < 1e-15);
    }

    #[test]
    fn large_slope_saturates() {
        let mut p = FuzzyPolicyParams {
            rules: vec![rule(&[-1.0], &[1.0], 0.4), rule(&[1.0], &[1.0], -0.1)],
            slope: 1.0,
            scale: 10.0,
        };
        let s = st(&[-0.5]);
        p.slope = 1e4;
        assert!(p.output(&s) > 10.0 - 1e-9);
    }

    #[test]
    fn far_states_do_not_produce_nan() {
        let p = FuzzyPolicyParams {
            rules: vec![rule(&[0.0], &[SIGMA_MIN], 1.0), rule(&[1.0], &[SIGMA_MIN], -1.0)],
            slope: 1.0,
            scale: 1.0,
        };
        let a = p.output(&st(&[50.0]));
        assert!((a - (-1.0f64).tanh()).abs() < 1e-12);
    }

    #[test]
    fn encoded_lengths_match_setup_table() {
        assert_eq!(encoded_len(2, 2), 11);
        assert_eq!(RuleLayout::new(4, 2, true).unwrap().free_len(), 10);
        assert_eq!(RuleLayout::new(4, 4, true).unwrap().free_len(), 19);
        assert!(RuleLayout::new(4, 3, true).is_err());
    }

    #[test]
    fn decode_rejects_wrong_length_and_repairs_widths() {
        assert!(FuzzyPolicyParams::decode(&[0.0; 10], 2, 2, 1.0).is_err());
        let mut x = vec![0.0; 11];
        x[2] = -0.5;
        x[3] = 0.0;
        let p = FuzzyPolicyParams::decode(&x, 2, 2, 1.0).unwrap();
        assert_eq!(p.rules[0].widths, vec![0.5, SIGMA_MIN]);
    }

    #[test]
    fn mirror_rule_negates_centers_and_output() {
        let half = [0.1, 0.0, 0.5, 0.0, 0.2, 0.3, 0.4, 0.5, 2.0, 1.5];
        let p = expand_symmetric(&half, 4, 10.0).unwrap();
        assert_eq!(p.rules.len(), 2);
        assert_eq!(p.rules[1].centers, vec![-0.1, 0.0, -0.5, 0.0]);
        assert_eq!(p.rules[1].widths, p.rules[0].widths);
        assert_eq!(p.rules[1].output, -2.0);
        assert_eq!(p.slope, 1.5);
        assert!(expand_symmetric(&half[..9], 4, 10.0).is_err());
    }

    #[test]
    fn search_bounds_shape() {
        let layout = RuleLayout::new(2, 2, false).unwrap();
        let (lo, hi) = layout.search_bounds(&[(-1.2, 0.6), (-3.5, 3.5)]).unwrap();
        assert_eq!(lo.len(), 11);
        assert!((lo[0] - (-1.65)).abs() < 1e-12 && (hi[0] - 1.05).abs() < 1e-12);
        assert!(lo[2] == SIGMA_MIN && (hi[2] - 1.8).abs() < 1e-12);
        assert_eq!((lo[4], hi[4]), (-OUTPUT_BOUND, OUTPUT_BOUND));
        assert_eq!((lo[10], hi[10]), (SIGMA_MIN, SLOPE_MAX));
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
    }

    fn mc_axes() -> Vec<Axis> {
        vec![
            Axis {
                name: "position".into(),
                unit: String::new(),
                range: (-1.2, 0.6),
            },
            Axis {
                name: "velocity".into(),
                unit: "1/s".into(),
                range: (-3.5, 3.5),
            },
        ]
    }

    #[test]
    fn rendering_structure() {
        let p = FuzzyPolicyParams {
            rules: vec![rule(&[-0.5, 0.0], &[0.3, 1.0], 2.0)],
            slope: 1.0,
            scale: 1.0,
        };
        let r = render_rules(&p, &mc_axes(), &[st(&[-0.5, 0.0])]).unwrap();
        assert_eq!(r.text.matches("rule ").count(), 1);
        assert!(r.text.contains("position"));
        assert!(r.text.contains("velocity [1/s]"));
        assert!(r.text.contains("r1=1.0000"));
        assert!(r.svg.starts_with("<svg") && r.svg.trim_end().ends_with("</svg>"));
        assert_eq!(r.svg.matches("<polyline").count(), 2);
        assert!(render_rules(&p, &mc_axes()[..1], &[]).is_err());
    }

    #[test]
    fn rendering_lists_signs_and_action() {
        let p = FuzzyPolicyParams {
            rules: vec![rule(&[-0.4, 0.8], &[0.9, 0.6], 3.0), rule(&[-0.5, -0.9], &[0.9, 0.6], -3.0)],
            slope: 2.0,
            scale: 1.0,
        };
        let s = st(&[-1.5, -1.0]);
        let r = render_rules(&p, &mc_axes(), &[s]).unwrap();
        assert!(r.text.contains("output +3.0000 (+)"));
        assert!(r.text.contains("output -3.0000 (-)"));
        assert!(r.text.contains(&format!("-> a={:+.4}", p.output(&s))));
    }

    fn arb_params(dim: usize, rules: usize) -> impl Strategy<Value = FuzzyPolicyParams> {
        let rule = (
            prop::collection::vec(-3.0..3.0f64, dim),
            prop::collection::vec(SIGMA_MIN..3.0f64, dim),
            -5.0..5.0f64,
        )
            .prop_map(|(centers, widths, output)| FuzzyRule {
                centers,
                widths,
                output,
            });
        (prop::collection::vec(rule, rules), 0.01..10.0f64, 0.5..30.0f64).prop_map(
            |(rules, slope, scale)| FuzzyPolicyParams { rules, slope, scale },
        )
    }

    proptest! {
        #[test]
        fn membership_in_unit_interval(p in arb_params(3, 1), x in prop::collection::vec(-3.0..3.0f64, 3)) {
            let m = membership(&p.rules[0], &State::from_slice(&x)).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
        }

        #[test]
        fn output_strictly_inside_scale(p in arb_params(2, 3), x in prop::collection::vec(-1e3..1e3f64, 2)) {
            let a = p.output(&State::from_slice(&x));
            prop_assert!(a.abs() <= p.scale);
            prop_assert!(a.is_finite());
        }

        #[test]
        fn shift_covariance(p in arb_params(2, 3), x in prop::collection::vec(-2.0..2.0f64, 2), shift in prop::collection::vec(-2.0..2.0f64, 2)) {
            let mut q = p.clone();
            for r in &mut q.rules {
                for (c, d) in r.centers.iter_mut().zip(&shift) {
                    *c += d;
                }
            }
            let s = State::from_slice(&x);
            let moved = State::from_slice(&[x[0] + shift[0], x[1] + shift[1]]);
            prop_assert!((p.output(&s) - q.output(&moved)).abs() < 1e-9);
        }

        #[test]
        fn encode_decode_round_trip(p in arb_params(4, 3)) {
            let back = FuzzyPolicyParams::decode(&p.encode(), 4, 3, p.scale).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn symmetric_policy_is_odd(half in prop::collection::vec(-2.0..2.0f64, 19), x in prop::collection::vec(-3.0..3.0f64, 4)) {
            let mut half = half;
            half[18] = half[18].abs() + 0.1;
            let p = expand_symmetric(&half, 4, 30.0).unwrap();
            let s = State::from_slice(&x);
            prop_assert!((p.output(&s) + p.output(&s.neg())).abs() <= 1e-12);
        }
    }
}
