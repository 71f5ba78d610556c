//! Converting embeddings between the text and binary formats.

use hirecall::embeddings::{convert_embeddings, load_embeddings, EmbeddingFormat};
use hirecall::EmbeddingStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("hirecall-emb-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let text = dir.join("vectors.tsv");
    let bin = dir.join("vectors.bin");

    let mut store = EmbeddingStore::new(4);
    store.insert("d1", &[0.5, 0.5, 0.5, 0.5])?;
    store.insert("d2", &[1.0, 0.0, 0.0, 0.0])?;
    store.insert("d3", &[0.0, 0.6, 0.8, 0.0])?;
    store.write_text(std::fs::File::create(&text)?)?;

    let n = convert_embeddings(&text, &bin, 4, EmbeddingFormat::Binary)?;
    println!(
        "{n} vectors: text {} bytes, binary {} bytes",
        std::fs::metadata(&text)?.len(),
        std::fs::metadata(&bin)?.len()
    );
    // The loader sniffs the format.
    let back = load_embeddings(&bin, 4)?;
    for id in store.ids() {
        assert_eq!(store.get(id), back.get(id));
        println!("{id}: {:?}", back.get(id).unwrap());
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
