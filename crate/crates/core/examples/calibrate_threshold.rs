//! Calibrates the default functional-gap threshold of `affgroup invariance`.
//!
//! Scores a generated corpus of matched and unmatched pairs with the reduced
//! pipeline and prints the threshold with the fewest misclassifications.
//!
//! ```text
//! cargo run --release --example calibrate_threshold -- [seed] [pairs-per-class]
//! ```

use affgroup::corpus::{generate, CorpusSpec};
use affgroup::invariance::{Pipeline, PipelineConfig};

fn main() -> affgroup::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(25);
    let spec = CorpusSpec { perturbation: 0.0, ..CorpusSpec::default() };
    let pipe = Pipeline::new(PipelineConfig::reduced()?)?;
    let mut scores = Vec::new();
    for pair in generate(seed, per_class, per_class, &spec)? {
        let f1 = pipe.lift(&pair.f1)?;
        let f2 = pipe.lift(&pair.f2)?;
        let gap = pipe.functionals(&f1, &f2)?.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{},{gap:.6e}", if pair.is_matched() { "matched" } else { "unmatched" });
        scores.push((gap, pair.is_matched()));
    }
    scores.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Candidate thresholds sit between consecutive scores; errors = matched above + unmatched at or below.
    let mut best = (usize::MAX, 0.0);
    for i in 0..=scores.len() {
        let t = match i {
            0 => 0.5 * scores[0].0,
            i if i == scores.len() => 2.0 * scores[i - 1].0,
            i => 0.5 * (scores[i - 1].0 + scores[i].0),
        };
        let errors = scores.iter().filter(|(s, m)| (*m && *s > t) || (!*m && *s <= t)).count();
        if errors < best.0 {
            best = (errors, t);
        }
    }
    let max_matched = scores.iter().filter(|s| s.1).map(|s| s.0).fold(0.0, f64::max);
    let min_unmatched = scores.iter().filter(|s| !s.1).map(|s| s.0).fold(f64::INFINITY, f64::min);
    println!("# max matched gap {max_matched:.6e}, min unmatched gap {min_unmatched:.6e}");
    println!("# threshold {:.6e} with {} of {} misclassified", best.1, best.0, scores.len());
    Ok(())
}
