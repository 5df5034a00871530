use super::laplace::{Laplace, P_FLOOR};
use crate::error::{Error, Result};

/// Total of a quantized frequency table.
pub const FREQ_TOTAL: u32 = 1 << 16;

/// Discrete distribution over `symbol_min..=symbol_max` with the Laplace
/// tails folded into the boundary symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfTable {
    pub symbol_min: i32,
    pub symbol_max: i32,
    pub probs: Vec<f64>,
}

pub fn build_pmf_table(params: Laplace, symbol_min: i32, symbol_max: i32) -> Result<PmfTable> {
    if symbol_max < symbol_min {
        return Err(Error::config(format!("empty symbol span [{symbol_min}, {symbol_max}]")));
    }
    let n = (symbol_max - symbol_min) as usize + 1;
    let mut probs = Vec::with_capacity(n);
    for k in symbol_min..=symbol_max {
        let p = if n == 1 {
            1.0
        } else if k == symbol_min {
            params.cdf(k as f64 + 0.5)
        } else if k == symbol_max {
            1.0 - params.cdf(k as f64 - 0.5)
        } else {
            params.bin_prob(k as f64)
        };
        probs.push(p.max(P_FLOOR));
    }
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(PmfTable { symbol_min, symbol_max, probs })
}

/// Cumulative 16-bit frequencies: `cum_freq[0] = 0`, last entry `65536`,
/// strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    pub symbol_min: i32,
    pub cum_freq: Vec<u32>,
}

impl CdfTable {
    pub fn symbol_count(&self) -> usize {
        self.cum_freq.len() - 1
    }

    pub fn symbol_max(&self) -> i32 {
        self.symbol_min + self.symbol_count() as i32 - 1
    }

    pub fn freq(&self, index: usize) -> u32 {
        self.cum_freq[index + 1] - self.cum_freq[index]
    }

    /// Appends `[symbol_min, n, cum_freq[0..=n]]`, the per-symbol record of
    /// the coder boundary.
    pub fn append_table_data(&self, out: &mut Vec<u32>) {
        out.push(self.symbol_min as u32);
        out.push(self.symbol_count() as u32);
        out.extend_from_slice(&self.cum_freq);
    }

    /// Ideal code length of `symbol` under the quantized table.
    pub fn bits(&self, symbol: i32) -> f64 {
        let f = self.freq((symbol - self.symbol_min) as usize);
        -(f as f64 / FREQ_TOTAL as f64).log2()
    }
}

/// Largest-remainder apportionment of `probs` onto a total of 65536 with
/// every frequency at least 1. Remainder ties go to the lower index.
pub fn quantize_pmf(symbol_min: i32, probs: &[f64]) -> Result<CdfTable> {
    let n = probs.len();
    if n == 0 {
        return Err(Error::config("empty pmf"));
    }
    if n > FREQ_TOTAL as usize {
        return Err(Error::config(format!("{n} symbols exceed the 16-bit table capacity")));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::config("pmf entries must be finite and nonnegative"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("pmf sums to {sum}, not 1")));
    }
    let ideal: Vec<f64> = probs.iter().map(|p| p / sum * FREQ_TOTAL as f64).collect();
    let mut freqs: Vec<u32> = ideal.iter().map(|v| v.floor() as u32).collect();
    let assigned: u64 = freqs.iter().map(|&f| f as u64).sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (ideal[b] - ideal[b].floor()).total_cmp(&(ideal[a] - ideal[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take((FREQ_TOTAL as u64).saturating_sub(assigned) as usize) {
        freqs[i] += 1;
    }
    // lift empty symbols to 1, paying from the largest frequency (lowest
    // probability among equals) so the ordering of frequencies follows the
    // ordering of probabilities
    for i in 0..n {
        if freqs[i] == 0 {
            freqs[i] = 1;
            let donor = (0..n)
                .filter(|&j| j != i)
                .max_by(|&a, &b| freqs[a].cmp(&freqs[b]).then(probs[b].total_cmp(&probs[a])).then(b.cmp(&a)))
                .expect("at least two symbols when one is empty");
            freqs[donor] -= 1;
        }
    }
    let mut cum_freq = Vec::with_capacity(n + 1);
    cum_freq.push(0);
    let mut acc = 0;
    for f in freqs {
        acc += f;
        cum_freq.push(acc);
    }
    Ok(CdfTable { symbol_min, cum_freq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::laplace_bin_prob;
    use proptest::prelude::*;

    #[test]
    fn folded_unit_laplace_span() {
        let t = build_pmf_table(Laplace::UNIT, -1, 1).unwrap();
        let tail = 0.5 * (-1.5f64).exp();
        let edge = laplace_bin_prob(1, Laplace::UNIT) + tail;
        assert!((t.probs[0] - edge).abs() < 1e-12);
        assert!((t.probs[1] - laplace_bin_prob(0, Laplace::UNIT)).abs() < 1e-12);
        assert!((t.probs[2] - edge).abs() < 1e-12);
        assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let cdf = quantize_pmf(-1, &t.probs).unwrap();
        assert_eq!(*cdf.cum_freq.last().unwrap(), FREQ_TOTAL);
        assert_eq!([cdf.freq(0), cdf.freq(1), cdf.freq(2)], [19875, 25786, 19875]);
    }

    #[test]
    fn degenerate_span_and_empty_span() {
        let t = build_pmf_table(Laplace::new(3.0, 0.2), 0, 0).unwrap();
        assert_eq!(t.probs, vec![1.0]);
        assert!(build_pmf_table(Laplace::UNIT, 1, 0).is_err());
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_pmf(0, &[0.5, 0.5]).unwrap().cum_freq, vec![0, 32768, 65536]);
        let t = quantize_pmf(0, &[1.0 - 1e-7, 1e-7]).unwrap();
        assert_eq!(t.freq(1), 1);
        assert!(quantize_pmf(0, &[0.5, 0.4]).is_err());
        assert!(quantize_pmf(0, &vec![1.0 / 65537.0; 65537]).is_err());
    }

    #[test]
    fn table_data_layout() {
        let t = quantize_pmf(-2, &[0.25, 0.75]).unwrap();
        let mut data = Vec::new();
        t.append_table_data(&mut data);
        assert_eq!(data, vec![(-2i32) as u32, 2, 0, 16384, 65536]);
        assert_eq!(t.symbol_max(), -1);
    }

    fn pmf() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..300).prop_filter_map("nonzero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 0.0).then(|| w.iter().map(|v| v / s).collect())
        })
    }

    proptest! {
        #[test]
        fn totals_floor_and_order(probs in pmf()) {
            let t = quantize_pmf(0, &probs).unwrap();
            prop_assert_eq!(*t.cum_freq.last().unwrap(), FREQ_TOTAL);
            for i in 0..probs.len() {
                prop_assert!(t.freq(i) >= 1);
                for j in 0..probs.len() {
                    if probs[i] > probs[j] {
                        prop_assert!(t.freq(i) >= t.freq(j));
                    }
                }
            }
        }

        #[test]
        fn laplace_tables_normalize(mu in -4.0f64..4.0, b in 0.01f64..8.0, lo in -20i32..0, width in 0i32..40) {
            let t = build_pmf_table(Laplace::new(mu, b), lo, lo + width).unwrap();
            prop_assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(t.probs.iter().all(|&p| p > 0.0));
        }
    }
}
