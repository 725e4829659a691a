//! Replace a tenth of the words of a watermarked text and trace them.

use segmark::bitstream::MessageBits;
use segmark::cli::BUNDLED_CORPUS;
use segmark::codec::{embed, EmbedParams, WatermarkParams};
use segmark::providers::{NgramModel, Provider};
use segmark::tamper::{substitute_attack, trace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = NgramModel::train(BUNDLED_CORPUS, 3, 0.0)?;
    let prompt = model.tokenize("Later, the control center")?;
    let message = MessageBits::encode_text("road-ops")?;
    let text = embed(&model, &prompt, &message, &EmbedParams::new(WatermarkParams::default(), 1024))?
        .text
        .rendered_text;

    let attack = substitute_attack(&text, 0.10, 2024, &model)?;
    let report = trace(&model, &attack.text, &prompt, 40)?.with_labels(&attack.labels)?;
    for (rec, &hit) in report.records.iter().zip(&attack.labels) {
        if hit || rec.tp >= 0.75 {
            println!(
                "{:>3} {:<16} rank {:>4}  TP {:.2}{}",
                rec.position,
                rec.word,
                rec.rank.map_or("-".into(), |r| r.to_string()),
                rec.tp,
                if hit { "  (replaced)" } else { "" }
            );
        }
    }
    println!(
        "fineness {:.3}, false positive rate {:.3}",
        report.fineness.unwrap_or(0.0),
        report.false_positive_rate.unwrap_or(0.0)
    );
    Ok(())
}
