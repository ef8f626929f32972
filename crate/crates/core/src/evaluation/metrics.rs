//! Answer and page metrics.

use crate::error::{Error, Result};

/// Lowercase, trim and collapse internal whitespace. Applied identically by
/// accuracy and ANLS.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Unit-cost edit distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `lev/max(len)` on normalised strings; two empty strings are at distance 0.
pub fn normalized_levenshtein(prediction: &str, truth: &str) -> f64 {
    let (p, t) = (normalize_answer(prediction), normalize_answer(truth));
    let longest = p.chars().count().max(t.chars().count());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(&p, &t) as f64 / longest as f64
}

/// `1 − normalized_levenshtein`.
pub fn normalized_similarity(prediction: &str, truth: &str) -> f64 {
    1.0 - normalized_levenshtein(prediction, truth)
}

/// Best `1 − NL` over the truths, counting a truth only while its normalised
/// distance NL stays strictly below `tau`.
pub fn sample_anls(prediction: &str, truths: &[String], tau: f64) -> f64 {
    truths
        .iter()
        .map(|t| normalized_levenshtein(prediction, t))
        .map(|nl| if nl < tau { 1.0 - nl } else { 0.0 })
        .fold(0.0, f64::max)
}

fn check_aligned<T>(predictions: usize, truths: &[T]) -> Result<()> {
    if predictions != truths.len() {
        return Err(Error::Validation(format!(
            "{predictions} predictions for {} ground truths",
            truths.len()
        )));
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

pub fn anls(predictions: &[String], truths: &[Vec<String>], tau: f64) -> Result<f64> {
    check_aligned(predictions.len(), truths)?;
    if let Some(i) = truths.iter().position(Vec::is_empty) {
        return Err(Error::Validation(format!("sample {i} has no ground-truth answer")));
    }
    Ok(mean(
        predictions.iter().zip(truths).map(|(p, t)| sample_anls(p, t, tau)),
        predictions.len(),
    ))
}

pub fn exact_match(prediction: &str, truths: &[String]) -> bool {
    let p = normalize_answer(prediction);
    truths.iter().any(|t| normalize_answer(t) == p)
}

pub fn exact_accuracy(predictions: &[String], truths: &[Vec<String>]) -> Result<f64> {
    check_aligned(predictions.len(), truths)?;
    Ok(mean(
        predictions.iter().zip(truths).map(|(p, t)| f64::from(u8::from(exact_match(p, t)))),
        predictions.len(),
    ))
}

pub fn page_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_aligned(predicted.len(), truth)?;
    Ok(mean(
        predicted.iter().zip(truth).map(|(p, t)| f64::from(u8::from(p == t))),
        predicted.len(),
    ))
}
