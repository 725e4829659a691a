//! Train, save and reload an n-gram provider; score text with it.

use segmark::cli::BUNDLED_CORPUS;
use segmark::metrics::provider_perplexity;
use segmark::providers::{NgramModel, Provider};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("segmark-train-example");
    std::fs::create_dir_all(&dir)?;
    let sample = "Drivers on the southern motorway must merge carefully and follow the detour after midnight.";

    for (order, alpha) in [(1, 0.0), (2, 0.0), (3, 0.0), (3, 0.1)] {
        let model = NgramModel::train(BUNDLED_CORPUS, order, alpha)?;
        let path = dir.join(format!("model-{order}-{alpha}.json"));
        model.save(&path)?;
        let loaded = NgramModel::load(&path)?;
        assert_eq!(loaded.fingerprint(), model.fingerprint());

        let tokens = loaded.tokenize(sample)?;
        let ppl = provider_perplexity(&loaded, &[], &tokens)?;
        let next = loaded.next_distribution(&tokens[..3])?;
        let top: Vec<String> = next
            .ranked()
            .iter()
            .take(3)
            .map(|(t, p)| format!("{}={p:.2}", loaded.vocabulary().word(*t).unwrap_or("?")))
            .collect();
        println!("order {order} alpha {alpha}: ppl {ppl:>7.3}  after 3 words: {}", top.join(" "));
    }
    Ok(())
}
