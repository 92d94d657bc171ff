//! Write and read the binary embedding format and the line-oriented string
//! and label files.

use kec::tensorio::{
    decode_embeddings, encode_embeddings, l2_normalize_rows, read_embeddings, read_labels,
    read_nouns, write_embeddings, write_labels, write_nouns, EmbeddingMatrix, LabelVector,
    NounVocabulary, HEADER_LEN,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;

    let raw = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0, 0.0], vec![0.0, 0.0, 2.0]])?;
    let unit = l2_normalize_rows(&raw)?;
    let bytes = encode_embeddings(&unit)?;
    println!(
        "{} rows x {} dims -> {} bytes ({} header + payload), normalized flag {}",
        unit.rows(),
        unit.dim(),
        bytes.len(),
        HEADER_LEN,
        unit.is_normalized()
    );
    assert_eq!(decode_embeddings(&bytes)?, unit);

    let path = dir.path().join("images.kecemb");
    write_embeddings(&unit, &path)?;
    let back = read_embeddings(&path)?;
    println!("first row after round trip: {:?}", back.row(0));

    let nouns = NounVocabulary::new(vec!["heron".into(), "otter".into()])?;
    write_nouns(&nouns, dir.path().join("nouns.txt"))?;
    let nouns = read_nouns(dir.path().join("nouns.txt"))?;
    nouns.check_aligned(&back)?;
    println!("nouns: {:?}", nouns.nouns());

    write_labels(&LabelVector::new(vec![0, 1], 2)?, dir.path().join("labels.txt"))?;
    println!("labels: {:?}", read_labels(dir.path().join("labels.txt"))?.labels());

    let mut corrupt = bytes.clone();
    corrupt.pop();
    println!("one byte short -> {}", decode_embeddings(&corrupt).unwrap_err());
    Ok(())
}
