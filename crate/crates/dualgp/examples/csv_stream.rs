//! Write a generated dataset to CSV, read it back and split it into batches.

use dualgp::data::{generate_banana, load_csv, partition_stream, save_csv};

fn main() -> dualgp::error::Result<()> {
    let dir = std::env::temp_dir().join("dualgp-csv-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("banana.csv");
    let data = generate_banana(100, 2, 5)?.concatenated()?;
    save_csv(&data, &path)?;
    let back = load_csv(&path)?;
    assert_eq!(back, data);
    let stream = partition_stream(&back, 60)?;
    let sizes: Vec<usize> = stream.batches().iter().map(|b| b.len()).collect();
    println!(
        "{} rows in {}; batches {sizes:?}; domain {:?}",
        back.len(),
        path.display(),
        back.domain()
    );
    Ok(())
}
