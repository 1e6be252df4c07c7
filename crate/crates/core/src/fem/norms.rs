use nalgebra::Vector2;

use super::assembly::local_mass;
use super::quadrature::default_rule;
use super::space::FeSpace;
use crate::error::{Error, Result};
use crate::mesh::Point;

/// Norms available for discrete functions and discretization errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2,
    H1Semi,
    H1,
    Lr(f64),
    W1r(f64),
}

impl NormKind {
    fn validate(self) -> Result<()> {
        match self {
            NormKind::Lr(r) | NormKind::W1r(r) if !(2.0..=6.0).contains(&r) => Err(Error::invalid(format!(
                "integrability exponent must lie in [2, 6], got {r}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Norm of the discrete function with coefficients `u`.
///
/// L2 and H1 use the exact elementwise quadratic forms; the `|u|^r` part of
/// Lr and W1r uses the order-3 rule; gradients are constant per element, so
/// the gradient part is exact.
pub fn norm(space: &FeSpace, u: &[f64], kind: NormKind) -> Result<f64> {
    kind.validate()?;
    space.check_len(u)?;
    let rule = default_rule();
    let mut value_part = 0.0;
    let mut grad_part = 0.0;
    for t in 0..space.n_elements() {
        let area = space.element(t).area;
        let vals = space.local_values(t, u);
        match kind {
            NormKind::L2 | NormKind::H1 => {
                let m = local_mass(area);
                for a in 0..3 {
                    for b in 0..3 {
                        value_part += vals[a] * m[a][b] * vals[b];
                    }
                }
            }
            NormKind::Lr(r) | NormKind::W1r(r) => {
                for (l, w) in rule {
                    let v = l[0] * vals[0] + l[1] * vals[1] + l[2] * vals[2];
                    value_part += w * area * v.abs().powf(r);
                }
            }
            NormKind::H1Semi => {}
        }
        let g = space.gradient(t, u).norm();
        match kind {
            NormKind::H1 | NormKind::H1Semi => grad_part += area * g * g,
            NormKind::W1r(r) => grad_part += area * g.powf(r),
            _ => {}
        }
    }
    Ok(combine(kind, value_part, grad_part))
}

/// Norm of `u_exact - u_h` by the order-3 rule on every element.
pub fn error_vs_exact<U, G>(space: &FeSpace, u_h: &[f64], u_exact: U, grad_exact: G, kind: NormKind) -> Result<f64>
where
    U: Fn(Point) -> f64,
    G: Fn(Point) -> Vector2<f64>,
{
    kind.validate()?;
    space.check_len(u_h)?;
    let rule = default_rule();
    let p = match kind {
        NormKind::L2 | NormKind::H1 | NormKind::H1Semi => 2.0,
        NormKind::Lr(r) | NormKind::W1r(r) => r,
    };
    let needs_value = !matches!(kind, NormKind::H1Semi);
    let needs_grad = matches!(kind, NormKind::H1 | NormKind::H1Semi | NormKind::W1r(_));
    let mut value_part = 0.0;
    let mut grad_part = 0.0;
    for t in 0..space.n_elements() {
        let area = space.element(t).area;
        let vals = space.local_values(t, u_h);
        let du = space.gradient(t, u_h);
        for (l, w) in rule {
            let x = space.map_point(t, l);
            if needs_value {
                let uh = l[0] * vals[0] + l[1] * vals[1] + l[2] * vals[2];
                let e = u_exact(x) - uh;
                if !e.is_finite() {
                    return Err(Error::NonFinite {
                        what: "exact solution",
                        x: x.x,
                        y: x.y,
                    });
                }
                value_part += w * area * e.abs().powf(p);
            }
            if needs_grad {
                let e = (grad_exact(x) - du).norm();
                if !e.is_finite() {
                    return Err(Error::NonFinite {
                        what: "exact gradient",
                        x: x.x,
                        y: x.y,
                    });
                }
                grad_part += w * area * e.powf(p);
            }
        }
    }
    Ok(combine(kind, value_part, grad_part))
}

fn combine(kind: NormKind, value_part: f64, grad_part: f64) -> f64 {
    match kind {
        NormKind::L2 => value_part.max(0.0).sqrt(),
        NormKind::H1Semi => grad_part.sqrt(),
        NormKind::H1 => (value_part + grad_part).max(0.0).sqrt(),
        NormKind::Lr(r) => value_part.powf(1.0 / r),
        NormKind::W1r(r) => (value_part + grad_part).powf(1.0 / r),
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::fem::assembly::{assemble_mass, assemble_stiffness, interpolate_nodal};
    use crate::mesh::TriMesh;

    fn space(n: usize) -> FeSpace {
        FeSpace::new(Arc::new(TriMesh::unit_square(n).unwrap())).unwrap()
    }

    fn sample(s: &FeSpace) -> Vec<f64> {
        interpolate_nodal(s, |p| {
            (PI * p.x).sin() * (2.0 * PI * p.y).sin() + p.x * p.y * (1.0 - p.x)
        })
        .unwrap()
    }

    #[test]
    fn zero_vector_has_zero_norm() {
        let s = space(4);
        let z = vec![0.0; s.n_free()];
        for kind in [
            NormKind::L2,
            NormKind::H1Semi,
            NormKind::H1,
            NormKind::Lr(3.0),
            NormKind::W1r(4.0),
        ] {
            assert_eq!(norm(&s, &z, kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn quadratic_forms_agree_with_quadrature() {
        let s = space(6);
        let u = sample(&s);
        let m = assemble_mass(&s);
        let k = assemble_stiffness(&s);
        let l2 = norm(&s, &u, NormKind::L2).unwrap();
        let lr2 = norm(&s, &u, NormKind::Lr(2.0)).unwrap();
        assert!((l2 * l2 - m.bilinear(&u, &u)).abs() < 1e-14);
        assert!((lr2 * lr2 - m.bilinear(&u, &u)).abs() < 1e-14);
        let semi = norm(&s, &u, NormKind::H1Semi).unwrap();
        assert!((semi * semi - k.bilinear(&u, &u)).abs() < 1e-12);
        let h1 = norm(&s, &u, NormKind::H1).unwrap();
        let w12 = norm(&s, &u, NormKind::W1r(2.0)).unwrap();
        assert!((h1 - w12).abs() < 1e-12);
    }

    #[test]
    fn exponent_range_is_checked() {
        let s = space(2);
        let u = vec![1.0];
        assert!(norm(&s, &u, NormKind::Lr(1.5)).is_err());
        assert!(norm(&s, &u, NormKind::W1r(7.0)).is_err());
        assert!(error_vs_exact(&s, &u, |_| 0.0, |_| Vector2::zeros(), NormKind::Lr(6.5)).is_err());
        assert!(norm(&s, &[1.0, 2.0], NormKind::L2).is_err());
    }

    #[test]
    fn error_of_reproduced_function_vanishes() {
        let s = space(4);
        let z = vec![0.0; s.n_free()];
        assert_eq!(
            error_vs_exact(&s, &z, |_| 0.0, |_| Vector2::zeros(), NormKind::H1).unwrap(),
            0.0
        );

        // any member of the space, evaluated by locating the containing element
        let s = space(4);
        let u = sample(&s);
        let locate = |p: Point| (0..s.n_elements()).find(|&t| contains(&s, t, p)).unwrap();
        let value = |p: Point| {
            let t = locate(p);
            let vals = s.local_values(t, &u);
            let [a, b, c] = s.mesh().corners(t);
            let area2 = 2.0 * s.element(t).area;
            let bary = |q: Point, r: Point| ((q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x)) / area2;
            bary(b, c) * vals[0] + bary(c, a) * vals[1] + bary(a, b) * vals[2]
        };
        let grad = |p: Point| s.gradient(locate(p), &u);
        let e = error_vs_exact(&s, &u, value, grad, NormKind::H1).unwrap();
        assert!(e < 1e-12, "{e}");
    }

    fn contains(s: &FeSpace, t: usize, p: Point) -> bool {
        let [a, b, c] = s.mesh().corners(t);
        let cross = |o: Point, q: Point| (q.x - o.x) * (p.y - o.y) - (q.y - o.y) * (p.x - o.x);
        cross(a, b) >= -1e-14 && cross(b, c) >= -1e-14 && cross(c, a) >= -1e-14
    }

    #[test]
    fn interpolation_error_rate() {
        let u = |p: Point| (PI * p.x).sin() * (PI * p.y).sin();
        let du = |p: Point| {
            Vector2::new(
                PI * (PI * p.x).cos() * (PI * p.y).sin(),
                PI * (PI * p.x).sin() * (PI * p.y).cos(),
            )
        };
        let errs: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&n| {
                let s = space(n);
                let ih = interpolate_nodal(&s, u).unwrap();
                error_vs_exact(&s, &ih, u, du, NormKind::H1).unwrap()
            })
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 1.0).abs() < 0.1, "{rate}");
        }
    }
}
