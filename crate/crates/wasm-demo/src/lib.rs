//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain strings and numbers and returns a JSON string, so
//! the page needs no generated TypeScript types.

use discuss_core::decision::{threshold_decision, Label};
use discuss_core::fixtures::FIG_EXAMPLE;
use discuss_core::metrics::{interruption_accuracy, speak_recall};
use discuss_core::training::{build_e2e_mask, expand_turns, render_classifier_context, render_e2e_sequence, BasicTokenizer, Tokenizer};
use discuss_core::transcript::{validate_transcript, Discussion};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn error(msg: impl ToString) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

fn parse_valid(text: &str) -> Result<Discussion, String> {
    match validate_transcript(text) {
        (Some(d), r) if r.ok => Ok(d),
        (_, r) => Err(r.to_string()),
    }
}

#[wasm_bindgen]
pub fn example_transcript() -> String {
    FIG_EXAMPLE.to_string()
}

/// Parse and validate a transcript: violations plus the turns that parsed.
#[wasm_bindgen]
pub fn inspect_transcript(text: &str) -> String {
    let (d, report) = validate_transcript(text);
    let turns: Value = d.as_ref().map_or(Value::Null, |d| json!(d.turns));
    let speakers: Vec<&str> = d.as_ref().map(|d| d.human_speakers().into_iter().collect()).unwrap_or_default();
    json!({
        "ok": report.ok,
        "violations": report.violations,
        "turns": turns,
        "speakers": speakers,
        "intervention_index": d.as_ref().and_then(Discussion::intervention_index),
    })
    .to_string()
}

/// Token pieces of the end-to-end training layout with their loss bits.
#[wasm_bindgen]
pub fn mask_view(text: &str) -> String {
    let d = match parse_valid(text) {
        Ok(d) => d,
        Err(e) => return error(e),
    };
    let tok = BasicTokenizer::new();
    let layout = render_e2e_sequence(&d.turns, true);
    let (mask, spans) = match (build_e2e_mask(&d, &tok), tok.tokenize(&layout.text)) {
        (Ok(m), Ok(t)) => (m, t),
        (Err(e), _) | (_, Err(e)) => return error(e),
    };
    // Emit the gaps between tokens too, so the page can rebuild the text.
    let mut pieces = Vec::new();
    let mut at = 0;
    for (t, bit) in spans.iter().zip(&mask.mask) {
        if t.start > at {
            pieces.push(json!({ "text": &layout.text[at..t.start], "loss": false, "token": false }));
        }
        pieces.push(json!({ "text": &layout.text[t.start..t.end], "loss": *bit == 1, "token": true }));
        at = t.end;
    }
    if at < layout.text.len() {
        pieces.push(json!({ "text": &layout.text[at..], "loss": false, "token": false }));
    }
    json!({
        "pieces": pieces,
        "tokens": mask.tokens.len(),
        "masked": mask.masked_count(),
        "silent_positions": mask.silent_token_positions,
    })
    .to_string()
}

/// Toy speak score for the sweep: high after a question, higher when the
/// question is the latest line.
fn toy_score(context: &str) -> f64 {
    let lines: Vec<&str> = context.lines().collect();
    let recent = lines.iter().rev().take(3).filter(|l| l.trim_end().ends_with('?')).count() as f64;
    let last = lines.last().is_some_and(|l| l.trim_end().ends_with('?'));
    (0.15 + 0.2 * recent + if last { 0.3 } else { 0.0 }).min(0.99)
}

/// Score every decision point with a toy classifier and report accuracy and
/// SPEAK recall across `steps` evenly spaced thresholds in (0, 1).
#[wasm_bindgen]
pub fn threshold_sweep(text: &str, steps: u32) -> String {
    let d = match parse_valid(text) {
        Ok(d) => d,
        Err(e) => return error(e),
    };
    let examples = match expand_turns(&d, "demo", true) {
        Ok(e) => e,
        Err(e) => return error(e),
    };
    let scored: Vec<(f64, Label)> =
        examples.iter().map(|ex| (toy_score(&render_classifier_context(&ex.context, 4_000)), ex.label)).collect();
    let labels: Vec<Label> = scored.iter().map(|s| s.1).collect();
    let steps = steps.clamp(1, 999);
    let points: Vec<Value> = (1..=steps)
        .map(|k| {
            let t = f64::from(k) / f64::from(steps + 1);
            let preds: Vec<Label> = scored.iter().map(|&(p, _)| threshold_decision(p, t)).collect();
            json!({
                "threshold": t,
                "accuracy": interruption_accuracy(&preds, &labels).ok(),
                "speak_recall": speak_recall(&preds, &labels),
            })
        })
        .collect();
    let decisions: Vec<Value> = examples
        .iter()
        .zip(&scored)
        .map(|(ex, (p, l))| json!({ "turn_index": ex.turn_index, "probability": p, "label": l }))
        .collect();
    json!({ "points": points, "decisions": decisions }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn inspect_example_and_broken() {
        let v = parse(&inspect_transcript(FIG_EXAMPLE));
        assert_eq!(v["ok"], true);
        assert_eq!(v["intervention_index"], 4);
        assert_eq!(v["speakers"].as_array().unwrap().len(), 4);
        let broken = FIG_EXAMPLE.replace("[AI_APPEARED]\n", "");
        let v = parse(&inspect_transcript(&broken));
        assert_eq!(v["ok"], false);
        assert_eq!(v["violations"][0]["code"], "MissingTag");
    }

    #[test]
    fn mask_pieces_rebuild_layout() {
        let v = parse(&mask_view(FIG_EXAMPLE));
        let pieces = v["pieces"].as_array().unwrap();
        let text: String = pieces.iter().map(|p| p["text"].as_str().unwrap()).collect();
        assert!(text.starts_with("John: Hey guys"));
        let hot: String = pieces.iter().filter(|p| p["loss"] == true).map(|p| p["text"].as_str().unwrap()).collect();
        assert!(hot.starts_with(">>>Nexus:"), "{hot}");
        assert_eq!(v["masked"], pieces.iter().filter(|p| p["loss"] == true).count());
        assert!(parse(&mask_view("nonsense")).get("error").is_some());
    }

    #[test]
    fn sweep_is_monotone_in_speak_recall() {
        let v = parse(&threshold_sweep(FIG_EXAMPLE, 99));
        let pts = v["points"].as_array().unwrap();
        assert_eq!(pts.len(), 99);
        assert!((pts[0]["threshold"].as_f64().unwrap() - 0.01).abs() < 1e-12);
        let recall: Vec<f64> = pts.iter().map(|p| p["speak_recall"].as_f64().unwrap()).collect();
        assert!(recall.windows(2).all(|w| w[0] >= w[1]));
        let acc: Vec<f64> = pts.iter().map(|p| p["accuracy"].as_f64().unwrap()).collect();
        assert!(acc.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(v["decisions"].as_array().unwrap().len(), 5);
    }
}
