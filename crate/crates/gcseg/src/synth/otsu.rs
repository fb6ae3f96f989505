//! Otsu's threshold over a 256-bin gray histogram.
//!
//! For a candidate threshold `t` the dark class holds bins `0..=t` and the
//! light class the rest. The chosen threshold is the smallest `t` maximizing
//! the between-class variance; because the class counts and sums come from
//! exact integer prefix sums, the score `n0 * n1 * (mu0 - mu1)^2` is the same
//! f64 expression no matter how the candidate classes are enumerated.

/// Luma of an RGB pixel: integer mean of the three channels.
pub fn gray(r: u8, g: u8, b: u8) -> u8 {
    ((r as u16 + g as u16 + b as u16) / 3) as u8
}

/// Histogram over gray values of an RGB8 pixel buffer.
pub fn histogram(rgb: &[u8]) -> [u64; 256] {
    assert_eq!(rgb.len() % 3, 0, "histogram: not an RGB8 buffer");
    let mut hist = [0u64; 256];
    for px in rgb.chunks_exact(3) {
        hist[gray(px[0], px[1], px[2]) as usize] += 1;
    }
    hist
}

/// Smallest threshold maximizing between-class variance, or `None` when the
/// histogram cannot be split (all mass in a single bin, or empty).
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
    let mut n0: u64 = 0;
    let mut s0: u64 = 0;
    let mut best: Option<(u8, f64)> = None;
    for t in 0..256usize {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        let d = s0 as f64 / n0 as f64 - s1 as f64 / n1 as f64;
        let score = (n0 as f64) * (n1 as f64) * d * d;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((t as u8, score));
        }
    }
    best.map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive reference: recompute both class statistics from scratch for
    /// every candidate threshold.
    fn otsu_naive(hist: &[u64; 256]) -> Option<u8> {
        let mut best: Option<(u8, f64)> = None;
        for t in 0..256usize {
            let n0: u64 = hist[..=t].iter().sum();
            let n1: u64 = hist[t + 1..].iter().sum();
            if n0 == 0 || n1 == 0 {
                continue;
            }
            let s0: u64 = hist[..=t].iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
            let s1: u64 = hist[t + 1..]
                .iter()
                .enumerate()
                .map(|(i, &c)| (t + 1 + i) as u64 * c)
                .sum();
            let d = s0 as f64 / n0 as f64 - s1 as f64 / n1 as f64;
            let score = (n0 as f64) * (n1 as f64) * d * d;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((t as u8, score));
            }
        }
        best.map(|(t, _)| t)
    }

    #[test]
    fn empty_and_single_bin_have_no_threshold() {
        assert_eq!(otsu_threshold(&[0; 256]), None);
        let mut hist = [0u64; 256];
        hist[77] = 1000;
        assert_eq!(otsu_threshold(&hist), None);
    }

    #[test]
    fn two_spikes_split_at_lower_bin() {
        let mut hist = [0u64; 256];
        hist[10] = 500;
        hist[200] = 500;
        // every t in 10..200 yields the same split; smallest wins
        assert_eq!(otsu_threshold(&hist), Some(10));
    }

    #[test]
    fn adjacent_bins_still_split() {
        let mut hist = [0u64; 256];
        hist[100] = 3;
        hist[101] = 7;
        assert_eq!(otsu_threshold(&hist), Some(100));
    }

    #[test]
    fn unbalanced_masses_move_threshold() {
        // heavy bright mode, light dark mode: threshold stays below the
        // bright mode
        let mut hist = [0u64; 256];
        for (i, c) in hist.iter_mut().enumerate() {
            if (60..70).contains(&i) {
                *c = 20;
            }
            if (240..250).contains(&i) {
                *c = 500;
            }
        }
        let t = otsu_threshold(&hist).unwrap();
        assert!((69..240).contains(&t), "threshold {t} outside the gap");
        assert_eq!(Some(t), otsu_naive(&hist));
    }

    #[test]
    fn matches_naive_oracle_on_random_histograms() {
        // xorshift so the test carries no RNG dependency
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for case in 0..300 {
            let mut hist = [0u64; 256];
            let bins = 1 + (next() % 12) as usize;
            for _ in 0..bins {
                let b = (next() % 256) as usize;
                hist[b] += next() % 10_000;
            }
            assert_eq!(
                otsu_threshold(&hist),
                otsu_naive(&hist),
                "divergence on case {case}: {hist:?}"
            );
        }
    }

    #[test]
    fn gray_is_integer_mean() {
        assert_eq!(gray(0, 0, 0), 0);
        assert_eq!(gray(255, 255, 255), 255);
        assert_eq!(gray(10, 20, 40), 23); // 70 / 3 rounds down
    }
}
