//! Embed a short message into generated text and read it back.

use segmark::bitstream::MessageBits;
use segmark::cli::BUNDLED_CORPUS;
use segmark::codec::{embed, extract, EmbedParams, WatermarkParams};
use segmark::providers::{NgramModel, Provider};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = NgramModel::train(BUNDLED_CORPUS, 3, 0.0)?;
    let prompt = model.tokenize("Drivers on the")?;
    let message = MessageBits::encode_text("ITS-42")?;
    let params = WatermarkParams::default();

    let embedding = embed(&model, &prompt, &message, &EmbedParams::new(params, 1024))?;
    println!("{}\n", embedding.text.rendered_text);
    println!(
        "{} bits over {} tokens, payload {:.3}",
        embedding.embedded_bits(),
        embedding.watermark_tokens(),
        embedding.embedded_bits() as f64 / embedding.watermark_tokens() as f64
    );
    for step in embedding.trace.iter().take(5) {
        println!(
            "  token {:>3}  segment [{}, {}]  committed {:?}",
            step.token_id, step.begin, step.end, step.bits
        );
    }

    let received = model.tokenize(&embedding.text.rendered_text)?;
    let bits = extract(&model, &prompt, &received, &params, message.len())?;
    println!("recovered: {:?}", bits.decode_text().text);
    Ok(())
}
