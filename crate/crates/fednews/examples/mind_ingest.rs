//! Parse MIND-style behavior and news TSV files into per-client stores.
//! Writes a small sample pair into a temp directory first, so the example
//! runs without any downloads; point the two paths at real files to ingest
//! an actual dataset.
//!
//! ```bash
//! cargo run -p fednews --example mind_ingest
//! ```

use fednews::data::{load_mind, LoadOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("fednews-mind-ingest");
    std::fs::create_dir_all(&dir)?;
    let news_path = dir.join("news.tsv");
    let behaviors_path = dir.join("behaviors.tsv");

    std::fs::write(
        &news_path,
        "N1\tsports\tsoccer\tBig Match Tonight\n\
         N2\tfinance\tmarkets\tMarkets Rally Again\n\
         N3\tweather\tlocal\tRain Expected All Week\n\
         N4\tsports\ttennis\tFinals Recap And Analysis\n\
         N5\ttech\tai\tNew Chips Ship Early\n\
         N6\ttech\tmobile\tFoldable Phones Return\n",
    )?;
    std::fs::write(
        &behaviors_path,
        "1\tU10\t11/13/2019 6:15:00 AM\tN1 N4\tN2-0 N5-1 N3-0\n\
         2\tU11\t11/13/2019 7:20:00 AM\tN2\tN1-1 N6-0 N3-0 N4-0\n\
         3\tU10\t11/13/2019 9:45:00 AM\tN1 N4 N5\tN6-1 N2-0\n\
         4\tU12\t11/14/2019 8:00:00 AM\tN3\tN5-1 N1-0 N2-0\n\
         5\tU11\t11/14/2019 9:30:00 AM\tN2 N1\tN4-1 N6-0 N5-0\n\
         6\tU10\t11/14/2019 10:05:00 AM\tN1 N4 N5 N6\tN2-1 N3-0\n\
         7\tU13\t11/14/2019 11:40:00 AM\tN6\tN3-1 N1-0 N4-0\n\
         8\tU12\t11/14/2019 1:10:00 PM\tN3 N5\tN6-1 N2-0 N4-0\n",
    )?;

    let opts = LoadOptions {
        neg_ratio: 2,
        seed: 7,
        ..Default::default()
    };
    let (dataset, stats) = load_mind(&behaviors_path, &news_path, &opts)?;

    println!("loaded {} news items, vocabulary {}", stats.news, dataset.corpus.vocab_size());
    println!(
        "{} impressions ({} clicks, {} non-clicks), {} malformed, {} duplicates",
        stats.impressions, stats.positives, stats.negatives, stats.malformed_rows,
        stats.duplicate_impressions,
    );
    println!("{} training clients:", dataset.clients.len());
    for client in &dataset.clients {
        println!(
            "  user {}: history {:?}, {} samples, local news set {:?}",
            client.user,
            client.history.iter().map(|i| dataset.corpus.external_id(*i)).collect::<Vec<_>>(),
            client.samples.len(),
            client.news_set.iter().map(|i| dataset.corpus.external_id(*i)).collect::<Vec<_>>(),
        );
    }
    println!(
        "held out: {} validation / {} test impressions from the last day",
        dataset.val.len(),
        dataset.test.len()
    );
    Ok(())
}
