//! Drive embedding through the JSON wire protocol against a tiny local
//! server that answers from an n-gram model.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use segmark::bitstream::MessageBits;
use segmark::cli::BUNDLED_CORPUS;
use segmark::codec::{embed, extract, EmbedParams, WatermarkParams};
use segmark::providers::{
    NgramModel, Provider, RemoteConfig, RemoteProvider, TokenId, WireEntry, WireRequest, WireResponse,
};

fn serve(model: NgramModel) -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}/v1/next", listener.local_addr()?);
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream.try_clone().expect("clone"));
            let mut stream = stream;
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 0 {
                let mut length = 0;
                loop {
                    line.clear();
                    reader.read_line(&mut line).expect("header");
                    if line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().expect("length");
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).expect("body");
                let req: WireRequest = serde_json::from_slice(&body).expect("request");
                let context: Vec<TokenId> = req.context_tokens.iter().map(|&t| TokenId(t)).collect();
                let mut entries: Vec<WireEntry> = model
                    .next_distribution(&context)
                    .expect("known tokens")
                    .ranked()
                    .into_iter()
                    .map(|(t, p)| WireEntry { id: t.0, prob: p })
                    .collect();
                entries.truncate(req.top_k);
                let reply = serde_json::to_string(&WireResponse { entries }).expect("reply");
                let head = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n",
                    reply.len()
                );
                stream.write_all(head.as_bytes()).expect("write");
                stream.write_all(reply.as_bytes()).expect("write");
                line.clear();
            }
        }
    });
    Ok(url)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = NgramModel::train(BUNDLED_CORPUS, 3, 0.0)?;
    let vocab = model.vocabulary().clone();
    let url = serve(model)?;
    println!("serving on {url}");

    let remote = RemoteProvider::new(RemoteConfig::new(url), vocab);
    let prompt = remote.tokenize("Drivers on the")?;
    let message = MessageBits::encode_text("remote")?;
    let params = WatermarkParams::default();
    let embedding = embed(&remote, &prompt, &message, &EmbedParams::new(params, 1024))?;
    println!("{}", embedding.text.rendered_text);
    let bits = extract(&remote, &prompt, &embedding.text.token_ids, &params, message.len())?;
    println!("recovered {:?} via {}", bits.decode_text().text, remote.fingerprint());
    Ok(())
}
