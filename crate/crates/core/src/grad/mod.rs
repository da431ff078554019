//! Reverse-mode differentiation of the training loss.

mod check;
mod tape;

pub use check::{check_gradients, GradCheckReport, REL_FLOOR};
pub use tape::{Gradients, ParamId, Tape, Var};
pub(crate) use tape::sigmoid;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn linear_map_gradient_is_x() {
        let x = [0.3, -1.2, 2.0];
        let mut tape = Tape::new();
        let u = tape.param(7, &[1.0, 1.0, 1.0]);
        let xc = tape.const_vec(&x);
        let out = tape.dot(u, xc);
        let g = tape.backward(out).unwrap();
        assert_eq!(g.get(7).unwrap(), &x);
    }

    #[test]
    fn squared_norm_gradient_is_2u() {
        let u0 = [0.5, -2.0, 3.0];
        let mut tape = Tape::new();
        let u = tape.param(0, &u0);
        let out = tape.dot(u, u);
        let g = tape.backward(out).unwrap();
        assert_eq!(g.get(0).unwrap(), &[1.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut tape = Tape::new();
        let u = tape.param(0, &[0.1, 0.7, -0.3]);
        let m = tape.outer(vec![1.0, -1.0, 2.0], u);
        let s = tape.softmax_rows(m);
        let s = tape.normalize_cols(s);
        let out = tape.sum(s);
        let e = tape.exp(out);
        let a = tape.backward(e).unwrap();
        let b = tape.backward(e).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nonfinite_value_names_op() {
        let mut tape = Tape::new();
        let u = tape.param(0, &[0.0]);
        let l = tape.ln(u);
        let out = tape.sum(l);
        let err = tape.backward(out).unwrap_err();
        assert!(err.to_string().contains("`log`"), "{err}");
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let u = tape.param(3, &[1.0, -1.0]);
        let y = tape.matvec(w, u);
        let out = tape.sum(y);
        let g = tape.backward(out).unwrap();
        assert_eq!(g.by_param.len(), 1);
        assert_eq!(g.get(3).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn param_mean_splits_gradient() {
        let mut tape = Tape::new();
        let m = tape.param_mean(&[1, 2], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = tape.const_vec(&[2.0, 4.0]);
        let out = tape.dot(m, c);
        assert!((tape.scalar(out) - 3.0).abs() < 1e-15);
        let g = tape.backward(out).unwrap();
        assert_eq!(g.get(1).unwrap(), &[1.0, 2.0]);
        assert_eq!(g.get(2).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn quadratic_bowl_check() {
        let r = check_gradients(
            |t, x| {
                let q = t.dot(x, x);
                t.scale(q, 0.5)
            },
            &[0.0, 0.0, 0.0],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn tie_flags_kink() {
        // |x0 - x1| at a tie.
        let r = check_gradients(
            |t, x| {
                let d = t.outer_diff(x);
                let a = t.abs(d);
                t.sum(a)
            },
            &[0.4, 0.4],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.nondifferentiable(), "{r:?}");
        assert!(!r.passed());
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let point = [0.3, -0.8, 1.1, 0.45];
        let r = check_gradients(
            |t, x| {
                let c = t.const_vec(&[0.5, 1.5, -0.25, 2.0]);
                let a = t.mul(x, c);
                let b = t.div(a, c);
                let b = t.sub(b, c);
                let b = t.add(b, x);
                let b = t.offset(b, 5.0);
                let l = t.ln(b);
                let e = t.exp(x);
                let g = t.gain(x);
                let s = t.sigmoid(l);
                let rl = t.relu(x);
                let n = t.norm(x);
                let y = t.scale_by(e, n);
                let y = t.div_by(y, n);
                let z = t.add(y, g);
                let z = t.add(z, s);
                let z = t.add(z, rl);
                let m = t.outer(vec![1.0, 2.0, -1.0], z);
                let sm = t.softmax_rows(m);
                let sk = t.normalize_cols(sm);
                let sk = t.normalize_rows(sk);
                let top = t.rows(sk, 0, 2);
                let od = t.outer_diff(x);
                let ab = t.abs(od);
                let rs = t.row_sums(ab);
                let stacked = t.stack_rows(&[x, rs]);
                let mv = t.matvec(stacked, c);
                let cat = t.concat(&[mv, x]);
                let s1 = t.sum(cat);
                let s2 = t.sum(top);
                let d = t.dot(x, z);
                let tot = t.add(s1, s2);
                t.add(tot, d)
            },
            &point,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
