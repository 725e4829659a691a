//! Regenerate only the highest-entropy half of a document's sentences.

use segmark::bitstream::MessageBits;
use segmark::cli::BUNDLED_CORPUS;
use segmark::codec::WatermarkParams;
use segmark::partial::{embed_partial, extract_partial, split_sentences, PartialParams};
use segmark::permission::{CipherPayload, MessageEncoding};
use segmark::providers::{NgramModel, Provider};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = NgramModel::train(BUNDLED_CORPUS, 3, 0.0)?;
    let document = BUNDLED_CORPUS.lines().nth(4).expect("corpus has documents");
    let message = MessageBits::from_literal("10110010")?;
    let params = PartialParams::new(WatermarkParams::default(), 0.5);

    let out = embed_partial(&model, &[], document, &message, &params)?;
    let before = split_sentences(document);
    let after = split_sentences(&out.text.rendered_text);
    for (old, new) in before.iter().zip(&after) {
        let mark = if out.sentence_indices.contains(&old.index) { "*" } else { " " };
        println!("{mark} {:>2} | {}", old.index, out.text.rendered_text[new.bytes.clone()].trim_end());
    }
    println!("regenerated {:?}, {} bits embedded", out.sentence_indices, out.embedded_bits());

    let base = CipherPayload::full("", params.watermark, message.len(), model.fingerprint(), MessageEncoding::Bits);
    let payload = out.payload(base, &params);
    let bits = extract_partial(&model, &out.text.rendered_text, &payload)?;
    println!("recovered {bits}");
    Ok(())
}
