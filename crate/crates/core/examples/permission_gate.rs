//! Seal the extraction parameters for one key holder; show what a wrong
//! key and a blind guess get.

use segmark::bitstream::MessageBits;
use segmark::cli::BUNDLED_CORPUS;
use segmark::codec::{embed, EmbedParams, WatermarkParams};
use segmark::metrics::{bit_match_ratio, guess_extract};
use segmark::permission::{self, keygen, CipherEnvelope, CipherPayload, MessageEncoding, PrivateKey};
use segmark::providers::{NgramModel, Provider};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = NgramModel::train(BUNDLED_CORPUS, 3, 0.0)?;
    let prompt_text = "The road authority records";
    let prompt = model.tokenize(prompt_text)?;
    let message = MessageBits::encode_text("owner:7")?;
    let params = WatermarkParams::new(0.7, 12, 40);
    let embedding = embed(&model, &prompt, &message, &EmbedParams::new(params, 2048))?;

    let owner = keygen("x25519")?;
    let payload = CipherPayload::full(prompt_text, params, message.len(), model.fingerprint(), MessageEncoding::Utf8);
    let bytes = permission::seal(&payload, &owner.public)?.to_bytes();
    println!("envelope: {} bytes", bytes.len());

    // The key round-trips through PEM like the CLI key files.
    let private = PrivateKey::from_pem(&owner.private.to_pem())?;
    let envelope = CipherEnvelope::from_bytes(&bytes)?;
    let bits = permission::verify_and_extract(&embedding.text, &envelope, &private, &model)?;
    println!("owner reads: {:?}", bits.decode_text().text);

    let stranger = keygen("x25519")?;
    match permission::verify_and_extract(&embedding.text, &envelope, &stranger.private, &model) {
        Err(e) => println!("stranger: {e}"),
        Ok(_) => unreachable!("a different key cannot open the envelope"),
    }

    let guessed = guess_extract(&model, &embedding.text.rendered_text);
    println!(
        "guess with default parameters: {} bits, {:.0}% prefix match",
        guessed.len(),
        100.0 * bit_match_ratio(message.bits(), &guessed)
    );
    Ok(())
}
