//! Hereditary-integral update for the Prony-series deviatoric relaxation.
//!
//! Each term keeps `h_i`, the exponentially weighted history of deviatoric
//! stress increments:
//!
//! ```text
//! h_i <- exp(-dt/tau_i) h_i + g_i (1 - exp(-dt/tau_i)) / (dt/tau_i) (s_new - s_old)
//! ```
//!
//! The relaxed part of term `i` is `g_i s_new - h_i`, so the deviatoric stress
//! is `s_new - sum_i (g_i s_new - h_i)`. Under sustained loading `h_i -> 0`
//! and the long-term modulus factor is `1 - sum_i g_i`.

use super::material::PronyTerm;

pub type Voigt = [f64; 6];

#[derive(Clone, Debug, PartialEq)]
pub struct PronyUpdate {
    pub total_dev: Voigt,
    pub history: Vec<Voigt>,
}

pub fn prony_update(
    s_dev_new: &Voigt,
    s_dev_old: &Voigt,
    h_old: &[Voigt],
    dt: f64,
    prony: &[PronyTerm],
) -> PronyUpdate {
    debug_assert_eq!(h_old.len(), prony.len());
    let mut total = *s_dev_new;
    let mut history = Vec::with_capacity(prony.len());
    for (term, h) in prony.iter().zip(h_old) {
        let x = dt / term.tau;
        let decay = (-x).exp();
        // dt = 0 is an instantaneous jump: the whole increment enters the history
        let weight = if x > 0.0 { term.g * (-x).exp_m1().abs() / x } else { term.g };
        let mut h_new = [0.0; 6];
        for k in 0..6 {
            h_new[k] = decay * h[k] + weight * (s_dev_new[k] - s_dev_old[k]);
            total[k] -= term.g * s_dev_new[k] - h_new[k];
        }
        history.push(h_new);
    }
    PronyUpdate {
        total_dev: total,
        history,
    }
}

/// Relaxed stress carried by each term, `g_i s - h_i`.
pub fn relaxed_parts(s_dev: &Voigt, history: &[Voigt], prony: &[PronyTerm]) -> Vec<Voigt> {
    prony
        .iter()
        .zip(history)
        .map(|(t, h)| std::array::from_fn(|k| t.g * s_dev[k] - h[k]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: Voigt = [3.0, -1.0, -2.0, 0.5, 0.25, -0.75];

    fn terms() -> Vec<PronyTerm> {
        vec![PronyTerm { g: 0.3, tau: 0.2 }, PronyTerm { g: 0.49, tau: 0.5 }]
    }

    #[test]
    fn empty_series_is_hyperelastic() {
        let u = prony_update(&S, &[0.0; 6], &[], 0.05, &[]);
        assert_eq!(u.total_dev, S);
        assert!(u.history.is_empty());
    }

    #[test]
    fn one_step_from_rest() {
        let dt = 0.05;
        let p = terms();
        let u = prony_update(&S, &[0.0; 6], &[[0.0; 6]; 2], dt, &p);
        for (t, h) in p.iter().zip(&u.history) {
            let x = dt / t.tau;
            for k in 0..6 {
                let expected = t.g * (1.0 - (-x).exp()) * S[k] / x;
                assert!((h[k] - expected).abs() <= 1e-15 * S[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn long_time_limit() {
        let p = terms();
        let dt = 0.05;
        let mut h = vec![[0.0; 6]; 2];
        let mut old = [0.0; 6];
        let mut total = [0.0; 6];
        // 40 s of sustained loading, 80 times the longest relaxation time
        for _ in 0..800 {
            let u = prony_update(&S, &old, &h, dt, &p);
            h = u.history;
            total = u.total_dev;
            old = S;
        }
        let factor = 1.0 - 0.3 - 0.49;
        for k in 0..6 {
            assert!((total[k] - factor * S[k]).abs() <= 1e-6 * S[k].abs());
        }
        let relaxed = relaxed_parts(&S, &h, &p);
        for (t, r) in p.iter().zip(&relaxed) {
            for k in 0..6 {
                assert!((r[k] - t.g * S[k]).abs() <= 1e-6 * S[k].abs());
            }
        }
    }

    #[test]
    fn zero_moduli_reduce_to_hyperelastic() {
        let p = vec![PronyTerm { g: 0.0, tau: 0.2 }];
        let u = prony_update(&S, &[1.0; 6], &[[0.0; 6]], 0.05, &p);
        assert_eq!(u.total_dev, S);
    }
}
