//! Independent brute-force oracles for the acceptance suite.
//!
//! Deliberately naive reimplementations: n-grams are counted by nested
//! window comparison over whitespace-split words, edit distance uses a
//! full DP matrix, the shift search enumerates every block and
//! destination, and gradients come from central finite differences over
//! forward values only. None of this shares code with the production
//! metric or backward paths it checks.

#![allow(dead_code)]

/// Whitespace tokenization; oracle corpora avoid punctuation so this
/// matches the production tokenizer on them by construction.
fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn count_ngram(tokens: &[String], gram: &[String]) -> u64 {
    if gram.is_empty() || tokens.len() < gram.len() {
        return 0;
    }
    let mut count = 0;
    for start in 0..=tokens.len() - gram.len() {
        if &tokens[start..start + gram.len()] == gram {
            count += 1;
        }
    }
    count
}

/// Corpus BLEU with clipped n-gram precisions (n = 1..4), exponential
/// smoothing (k-th zero order contributes 1/2^k), and the brevity
/// penalty.
pub fn bleu(hyps: &[String], refs: &[String]) -> f64 {
    assert_eq!(hyps.len(), refs.len());
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    let mut correct = [0u64; 4];
    let mut total = [0u64; 4];
    for (h, r) in hyps.iter().zip(refs) {
        let ht = words(h);
        let rt = words(r);
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=4 {
            if ht.len() < n {
                continue;
            }
            // Distinct n-grams of the hypothesis, found by rescanning.
            let mut seen: Vec<&[String]> = Vec::new();
            for start in 0..=ht.len() - n {
                let gram = &ht[start..start + n];
                if seen.iter().any(|g| *g == gram) {
                    continue;
                }
                seen.push(gram);
                let in_hyp = count_ngram(&ht, gram);
                let in_ref = count_ngram(&rt, gram);
                total[n - 1] += in_hyp;
                correct[n - 1] += in_hyp.min(in_ref);
            }
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let mut log_sum = 0.0;
    let mut orders = 0;
    let mut smooth = 1.0;
    for n in 0..4 {
        if total[n] == 0 {
            break;
        }
        let p = if correct[n] == 0 {
            smooth *= 2.0;
            1.0 / smooth
        } else {
            correct[n] as f64 / total[n] as f64
        };
        log_sum += p.ln();
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    100.0 * bp * (log_sum / orders as f64).exp()
}

fn char_grams(text: &str, n: usize) -> Vec<Vec<char>> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    if chars.len() < n {
        return Vec::new();
    }
    (0..=chars.len() - n).map(|i| chars[i..i + n].to_vec()).collect()
}

/// chrF with char n-grams 1..6, corpus-level macro-averaged precision and
/// recall, beta = 2.
pub fn chrf(hyps: &[String], refs: &[String]) -> f64 {
    assert_eq!(hyps.len(), refs.len());
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut kept = 0usize;
    for n in 1..=6 {
        let mut matches = 0u64;
        let mut hyp_total = 0u64;
        let mut ref_total = 0u64;
        for (h, r) in hyps.iter().zip(refs) {
            let hg = char_grams(h, n);
            let mut rg = char_grams(r, n);
            ref_total += rg.len() as u64;
            hyp_total += hg.len() as u64;
            for gram in &hg {
                if let Some(pos) = rg.iter().position(|g| g == gram) {
                    rg.swap_remove(pos);
                    matches += 1;
                }
            }
        }
        if hyp_total == 0 && ref_total == 0 {
            continue;
        }
        kept += 1;
        if hyp_total > 0 {
            p_sum += matches as f64 / hyp_total as f64;
        }
        if ref_total > 0 {
            r_sum += matches as f64 / ref_total as f64;
        }
    }
    if kept == 0 {
        return 0.0;
    }
    let p = p_sum / kept as f64;
    let r = r_sum / kept as f64;
    let denom = 4.0 * p + r;
    if denom == 0.0 {
        return 0.0;
    }
    100.0 * 5.0 * p * r / denom
}

/// Full-matrix word edit distance.
fn edit_distance(a: &[String], b: &[String]) -> u64 {
    let mut dp = vec![vec![0u64; b.len() + 1]; a.len() + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i as u64;
    }
    for j in 0..=b.len() {
        dp[0][j] = j as u64;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = dp[i - 1][j - 1] + u64::from(a[i - 1] != b[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    dp[a.len()][b.len()]
}

/// Greedy-shift TER without block/distance caps: every block of the
/// current hypothesis that occurs somewhere in the reference may move to
/// every position; the move with the largest edit-distance reduction is
/// applied until none helps.
pub fn ter(hyps: &[String], refs: &[String]) -> f64 {
    assert_eq!(hyps.len(), refs.len());
    let mut edits = 0u64;
    let mut denom = 0u64;
    for (h, r) in hyps.iter().zip(refs) {
        let (e, d) = ter_sentence(&words(h), &words(r));
        edits += e;
        denom += d;
    }
    if denom == 0 {
        return 0.0;
    }
    100.0 * edits as f64 / denom as f64
}

fn occurs_in(reference: &[String], block: &[String]) -> bool {
    if block.len() > reference.len() {
        return false;
    }
    (0..=reference.len() - block.len()).any(|s| &reference[s..s + block.len()] == block)
}

fn ter_sentence(hyp: &[String], reference: &[String]) -> (u64, u64) {
    if reference.is_empty() {
        return (hyp.len() as u64, 1);
    }
    let mut current = hyp.to_vec();
    let mut shifts = 0u64;
    loop {
        let base = edit_distance(&current, reference);
        if base == 0 {
            break;
        }
        let mut best_seq: Option<Vec<String>> = None;
        let mut best_dist = base;
        for start in 0..current.len() {
            for end in start + 1..=current.len() {
                let block = &current[start..end];
                if !occurs_in(reference, block) {
                    continue;
                }
                let mut rest = current[..start].to_vec();
                rest.extend_from_slice(&current[end..]);
                for dest in 0..=rest.len() {
                    if dest == start {
                        continue;
                    }
                    let mut candidate = rest[..dest].to_vec();
                    candidate.extend_from_slice(block);
                    candidate.extend_from_slice(&rest[dest..]);
                    let d = edit_distance(&candidate, reference);
                    if d < best_dist {
                        best_dist = d;
                        best_seq = Some(candidate);
                    }
                }
            }
        }
        match best_seq {
            Some(seq) => {
                current = seq;
                shifts += 1;
            }
            None => break,
        }
    }
    (shifts + edit_distance(&current, reference), reference.len() as u64)
}

/// Central finite differences of a scalar function over one tensor's
/// elements; h = 1e-5.
pub fn finite_diff_grad(
    eval: &mut dyn FnMut(&[f64]) -> f64,
    at: &[f64],
) -> Vec<f64> {
    let h = 1e-5;
    let mut grad = vec![0.0; at.len()];
    let mut probe = at.to_vec();
    for i in 0..at.len() {
        probe[i] = at[i] + h;
        let up = eval(&probe);
        probe[i] = at[i] - h;
        let down = eval(&probe);
        probe[i] = at[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}
