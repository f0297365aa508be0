//! Residual-control diagnostics: a periodogram summary of `ū`.

/// Frequency samples per `2π/T` of the periodogram scan.
const OVERSAMPLE: f64 = 16.0;
/// Highest frequency scanned, in cycles per horizon.
const MAX_CYCLES: f64 = 50.0;

/// Residuals of the least-squares line through `(t, y)`.
fn detrend(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len() as f64;
    let (mt, my) = (t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let stt: f64 = t.iter().map(|v| (v - mt).powi(2)).sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    t.iter().zip(y).map(|(a, b)| b - my - slope * (a - mt)).collect()
}

/// Period at the peak of `|∫ y(t) e^{−iωt} dt|²` over `ω ∈ [2π/T, 2π·50/T]`
/// (capped at the Nyquist frequency), after removing a linear trend. `None`
/// for a flat signal.
pub fn dominant_period(t: &[f64], y: &[f64]) -> Option<f64> {
    let n = t.len();
    if n < 4 {
        return None;
    }
    let span = t[n - 1] - t[0];
    let h = span / (n - 1) as f64;
    let r = detrend(t, y);
    if r.iter().all(|v| v.abs() <= 1e-300) {
        return None;
    }
    let w0 = std::f64::consts::TAU / span;
    let w_max = (MAX_CYCLES * w0).min(std::f64::consts::PI / h);
    let step = w0 / OVERSAMPLE;
    let mut best = (0.0, f64::NEG_INFINITY);
    let mut w = w0;
    while w <= w_max + 1e-12 * w_max {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, (ti, ri)) in t.iter().zip(&r).enumerate() {
            let weight = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            re += weight * ri * (w * ti).cos();
            im -= weight * ri * (w * ti).sin();
        }
        let power = re * re + im * im;
        if power > best.1 {
            best = (w, power);
        }
        w += step;
    }
    Some(std::f64::consts::TAU / best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_the_period_of_a_trended_sinusoid() {
        let t: Vec<f64> = (0..=3000).map(|i| 15.0 * i as f64 / 3000.0).collect();
        let y: Vec<f64> = t.iter().map(|v| 0.3 * v + (v * 1.3).sin()).collect();
        let p = dominant_period(&t, &y).unwrap();
        let want = std::f64::consts::TAU / 1.3;
        assert!((p - want).abs() <= 0.05 * want, "{p} vs {want}");
    }

    #[test]
    fn flat_signal_has_no_period() {
        let t: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(dominant_period(&t, &vec![2.0; 100]), None);
    }
}
