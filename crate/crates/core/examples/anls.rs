//! Answer metrics: normalisation, edit distance, ANLS at the 0.5 threshold.

use hivt5::evaluation::{anls, exact_accuracy, levenshtein, normalize_answer, normalized_levenshtein, sample_anls, ANLS_THRESHOLD};

fn main() -> hivt5::Result<()> {
    let pairs = [
        ("november 8 1977", "november 8, 1977"),
        ("  Paris ", "paris"),
        ("abcde", "abxyz"),
        ("ab", "ax"),
        ("", "anything"),
    ];
    println!("{:<20}{:<20}{:>5}{:>8}{:>8}", "prediction", "truth", "lev", "NL", "ANLS");
    for (p, t) in pairs {
        let (np, nt) = (normalize_answer(p), normalize_answer(t));
        println!(
            "{:<20}{:<20}{:>5}{:>8.4}{:>8.4}",
            format!("{p:?}"),
            format!("{t:?}"),
            levenshtein(&np, &nt),
            normalized_levenshtein(p, t),
            sample_anls(p, &[t.to_string()], ANLS_THRESHOLD)
        );
    }

    let preds: Vec<String> = ["v3", "V3 ", "v31", "v4"].iter().map(|s| s.to_string()).collect();
    let truths: Vec<Vec<String>> = vec![vec!["v3".into()], vec!["v3".into()], vec!["v3".into(), "v31".into()], vec!["v5".into()]];
    println!("exact accuracy {:.3}", exact_accuracy(&preds, &truths)?);
    println!("ANLS           {:.3}", anls(&preds, &truths, ANLS_THRESHOLD)?);
    Ok(())
}
