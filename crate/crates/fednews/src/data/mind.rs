//! Loader for MIND-style TSV behavior and news files.
//!
//! behaviors.tsv rows: impression id, user id, time, space-separated click
//! history, space-separated "ID-label" candidates. news.tsv rows: id,
//! category, subcategory, title, ...; only id and title are consumed.
//!
//! Rows on the day before the last build the training set; the last day's
//! impressions are split into validation (~20% of clicks) and test. Earlier
//! days only contribute history, which the rows carry themselves.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{seq::SliceRandom, RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::DataError;
use crate::model::{ItemId, NewsContent, UserId};

use super::{Behavior, ClientStore, Corpus, Dataset, EvalImpression, Impression};

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Most recent clicks kept per history.
    pub history_max: usize,
    /// Negatives per positive when building training samples.
    pub neg_ratio: usize,
    /// Fraction of last-day clicks reserved for validation.
    pub val_fraction: f64,
    /// Vocabulary cap (most frequent tokens kept); index 0 is reserved for
    /// out-of-vocabulary tokens.
    pub vocab_cap: usize,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            history_max: 50,
            neg_ratio: 4,
            val_fraction: 0.2,
            vocab_cap: 30_000,
            seed: 0,
        }
    }
}

/// Ingestion counters, including skipped-row diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MindStats {
    pub news: usize,
    pub users: usize,
    pub impressions: usize,
    pub positives: usize,
    pub negatives: usize,
    pub malformed_rows: usize,
    pub unknown_item_rows: usize,
    pub duplicate_impressions: usize,
}

/// Days since the civil epoch, used only to order rows into calendar days.
fn day_number(month: u32, day: u32, year: i32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year } as i64;
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let m = month as i64;
    let doy = (153 * (m + if m > 2 { -3 } else { 9 }) + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe
}

fn parse_day(time: &str) -> Option<i64> {
    let date = time.split_whitespace().next()?;
    let mut parts = date.split('/');
    let month: u32 = parts.next()?.parse().ok()?;
    let day: u32 = parts.next()?.parse().ok()?;
    let year: i32 = parts.next()?.parse().ok()?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    Some(day_number(month, day, year))
}

pub(crate) fn tokenize(title: &str) -> Vec<String> {
    title
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn load_news(path: &Path, vocab_cap: usize) -> Result<(Corpus, usize), DataError> {
    let file = std::fs::File::open(path)?;
    let mut raw: Vec<(String, Vec<String>)> = Vec::new();
    let mut malformed = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(id), _cat, _subcat, Some(title)) =
            (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            malformed += 1;
            let _ = lineno;
            continue;
        };
        raw.push((id.to_string(), tokenize(title)));
    }

    // Frequency-capped vocabulary; deterministic tie-break on the token.
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for (_, toks) in &raw {
        for t in toks {
            *freq.entry(t.clone()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(vocab_cap);
    let token_ids: BTreeMap<String, u32> = ranked
        .into_iter()
        .enumerate()
        .map(|(i, (t, _))| (t, i as u32 + 1)) // 0 = out-of-vocabulary
        .collect();
    let vocab_size = token_ids.len() + 1;

    let mut items = Vec::with_capacity(raw.len());
    let mut external_ids = Vec::with_capacity(raw.len());
    let mut seen = BTreeSet::new();
    for (ext, toks) in raw {
        if !seen.insert(ext.clone()) {
            continue; // duplicate news id: first wins
        }
        let mut tokens: Vec<u32> = toks
            .iter()
            .map(|t| token_ids.get(t.as_str()).copied().unwrap_or(0))
            .collect();
        if tokens.is_empty() {
            tokens.push(0);
        }
        items.push(NewsContent {
            id: ItemId(items.len() as u32),
            tokens,
        });
        external_ids.push(ext);
    }
    Ok((Corpus::new(items, external_ids, vocab_size), malformed))
}

struct RawRow {
    user: String,
    day: i64,
    history: Vec<ItemId>,
    impression: Impression,
    clicks: usize,
}

/// Load a MIND-style dataset from `behaviors` and `news` TSV files.
pub fn load_mind(
    behaviors: &Path,
    news: &Path,
    opts: &LoadOptions,
) -> Result<(Dataset, MindStats), DataError> {
    let (corpus, news_malformed) = load_news(news, opts.vocab_cap)?;
    let mut stats = MindStats {
        news: corpus.len(),
        malformed_rows: news_malformed,
        ..Default::default()
    };

    let file = std::fs::File::open(behaviors)?;
    let mut rows: Vec<RawRow> = Vec::new();
    let mut seen_impressions = BTreeSet::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 {
            stats.malformed_rows += 1;
            continue;
        }
        let (imp_id, user, time, history_col, imps_col) =
            (cols[0], cols[1], cols[2], cols[3], cols[4]);
        if !seen_impressions.insert(imp_id.to_string()) {
            stats.duplicate_impressions += 1;
            continue; // first occurrence wins
        }
        let Some(day) = parse_day(time) else {
            stats.malformed_rows += 1;
            continue;
        };
        let mut unknown = false;
        let history: Vec<ItemId> = history_col
            .split_whitespace()
            .filter_map(|ext| {
                let id = corpus.lookup(ext);
                if id.is_none() {
                    unknown = true;
                }
                id
            })
            .collect();
        let mut items = Vec::new();
        let mut malformed = false;
        let mut clicks = 0usize;
        for cand in imps_col.split_whitespace() {
            let Some((ext, label)) = cand.rsplit_once('-') else {
                malformed = true;
                break;
            };
            let label = match label {
                "1" => true,
                "0" => false,
                _ => {
                    malformed = true;
                    break;
                }
            };
            let Some(id) = corpus.lookup(ext) else {
                unknown = true;
                break;
            };
            if label {
                clicks += 1;
            }
            items.push((id, label));
        }
        if malformed {
            stats.malformed_rows += 1;
            continue;
        }
        if unknown {
            stats.unknown_item_rows += 1;
            continue;
        }
        if items.is_empty() {
            stats.malformed_rows += 1;
            continue;
        }
        stats.impressions += 1;
        stats.positives += clicks;
        stats.negatives += items.len() - clicks;
        rows.push(RawRow {
            user: user.to_string(),
            day,
            history,
            impression: Impression { items },
            clicks,
        });
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    let last_day = rows.iter().map(|r| r.day).max().unwrap();
    let first_day = rows.iter().map(|r| r.day).min().unwrap();
    // Single-day files train on everything; otherwise the day before the
    // last trains and the last day is held out.
    let (train_day, eval_day) = if first_day == last_day {
        (last_day, None)
    } else {
        (last_day - 1, Some(last_day))
    };

    let mut user_ids: BTreeMap<String, UserId> = BTreeMap::new();
    let mut behaviors_by_user: BTreeMap<UserId, Behavior> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.day == train_day) {
        let next = UserId(user_ids.len() as u32);
        let uid = *user_ids.entry(row.user.clone()).or_insert(next);
        let b = behaviors_by_user.entry(uid).or_insert_with(|| Behavior {
            user: uid,
            history: Vec::new(),
            impressions: Vec::new(),
        });
        // Histories are point-in-time snapshots; keep the longest seen.
        if row.history.len() > b.history.len() {
            b.history = row.history.clone();
        }
        b.impressions.push(row.impression.clone());
    }
    stats.users = behaviors_by_user.len();

    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let clients: Vec<ClientStore> = behaviors_by_user
        .values()
        .map(|b| {
            let mut crng = ChaCha20Rng::seed_from_u64(opts.seed ^ (0x9e3779b9 ^ b.user.0 as u64));
            ClientStore::from_behavior(b, opts.neg_ratio, opts.history_max, &mut crng)
        })
        .collect();

    // Last-day rows: validation takes rows until it holds ~val_fraction of
    // the day's clicks, the rest test.
    let mut val = Vec::new();
    let mut test = Vec::new();
    if let Some(eval_day) = eval_day {
        let mut eval_rows: Vec<&RawRow> = rows.iter().filter(|r| r.day == eval_day).collect();
        let total_clicks: usize = eval_rows.iter().map(|r| r.clicks).sum();
        let target = (total_clicks as f64 * opts.val_fraction).round() as usize;
        eval_rows.shuffle(&mut rng);
        let mut val_clicks = 0usize;
        for row in eval_rows {
            let next = UserId(user_ids.len() as u32);
            let uid = *user_ids.entry(row.user.clone()).or_insert(next);
            let imp = EvalImpression {
                user: uid,
                history: super::truncate_history(&row.history, opts.history_max),
                candidates: row.impression.items.clone(),
            };
            if val_clicks < target {
                val_clicks += row.clicks;
                val.push(imp);
            } else {
                test.push(imp);
            }
        }
    }

    Ok((
        Dataset {
            corpus,
            clients,
            val,
            test,
            truth: None,
        },
        stats,
    ))
}

/// Convert a click-log TSV (time-ordered rows: user, item id, title) into
/// MIND-style behaviors/news files, sampling `negs_per_click` random
/// non-clicked items per click as candidates.
pub fn convert_click_log(
    clicks: &Path,
    out_behaviors: &Path,
    out_news: &Path,
    negs_per_click: usize,
    seed: u64,
) -> Result<(), DataError> {
    let file = std::fs::File::open(clicks)?;
    let mut events: Vec<(String, String, String)> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            continue;
        }
        events.push((cols[0].to_string(), cols[1].to_string(), cols[2].to_string()));
    }
    if events.is_empty() {
        return Err(DataError::Empty);
    }

    let mut news: BTreeMap<String, String> = BTreeMap::new();
    for (_, item, title) in &events {
        news.entry(item.clone()).or_insert_with(|| title.clone());
    }
    let pool: Vec<&String> = news.keys().collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut history: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut out = std::fs::File::create(out_behaviors)?;
    for (i, (user, item, _)) in events.iter().enumerate() {
        let h = history.entry(user.clone()).or_default();
        let mut cands = vec![format!("{item}-1")];
        for _ in 0..negs_per_click {
            loop {
                let neg = pool[rng.random_range(0..pool.len())];
                if neg != item {
                    cands.push(format!("{neg}-0"));
                    break;
                }
            }
        }
        writeln!(
            out,
            "{}\t{}\t11/{}/2019 0:00:00 AM\t{}\t{}",
            i + 1,
            user,
            1 + i * 6 / events.len(), // spread events over six days
            h.join(" "),
            cands.join(" ")
        )?;
        h.push(item.clone());
    }
    let mut out = std::fs::File::create(out_news)?;
    for (id, title) in &news {
        writeln!(out, "{id}\tnone\tnone\t{title}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    
    fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    const NEWS: &str = "N1\tsports\tsoccer\tBig Match Tonight\n\
N2\tnews\tworld\tMarkets Rally Again\n\
N3\tnews\tlocal\tRain Expected\n\
N4\tsports\ttennis\tFinals Recap\n\
N5\ttech\tai\tNew Chips Ship\n";

    #[test]
    fn toy_files_build_the_expected_structures() {
        let dir = tempfile::tempdir().unwrap();
        let news = write_file(dir.path(), "news.tsv", NEWS);
        let behaviors = write_file(
            dir.path(),
            "behaviors.tsv",
            "1\tU1\t11/13/2019 9:05:58 AM\tN1 N2\tN3-1 N4-0 N5-0\n\
             2\tU2\t11/13/2019 10:00:00 AM\tN3\tN1-0 N2-1\n\
             3\tU1\t11/14/2019 8:00:00 AM\tN1 N2 N3\tN4-1 N5-0\n\
             4\tU3\t11/14/2019 9:00:00 AM\tN2\tN5-1 N1-0 N3-0\n",
        );
        let (ds, stats) = load_mind(&behaviors, &news, &LoadOptions::default()).unwrap();
        assert_eq!(stats.news, 5);
        assert_eq!(stats.impressions, 4);
        assert_eq!(stats.positives, 4);
        assert_eq!(stats.negatives, 6);
        // Day 13 trains (2 users), day 14 is held out.
        assert_eq!(stats.users, 2);
        assert_eq!(ds.clients.len(), 2);
        assert_eq!(ds.val.len() + ds.test.len(), 2);
        let u1 = &ds.clients[0];
        assert_eq!(u1.history, vec![ItemId(0), ItemId(1)]);
        assert_eq!(u1.samples.len(), 1);
        assert_eq!(u1.samples[0].candidates[0], ItemId(2)); // N3 clicked
        // N3 history + N3/N4/N5 impression items.
        let expect: std::collections::BTreeSet<ItemId> =
            [0, 1, 2, 3, 4].map(ItemId).into();
        assert_eq!(u1.news_set, expect);
    }

    #[test]
    fn duplicate_impressions_keep_the_first() {
        let dir = tempfile::tempdir().unwrap();
        let news = write_file(dir.path(), "news.tsv", NEWS);
        let behaviors = write_file(
            dir.path(),
            "behaviors.tsv",
            "1\tU1\t11/13/2019 9:05:58 AM\tN1\tN3-1 N4-0\n\
             1\tU1\t11/13/2019 9:05:58 AM\tN1\tN5-1 N4-0\n",
        );
        let (ds, stats) = load_mind(&behaviors, &news, &LoadOptions::default()).unwrap();
        assert_eq!(stats.duplicate_impressions, 1);
        assert_eq!(stats.impressions, 1);
        assert_eq!(ds.clients[0].samples[0].candidates[0], ItemId(2));
    }

    #[test]
    fn malformed_and_unknown_rows_are_skipped_with_counters() {
        let dir = tempfile::tempdir().unwrap();
        let news = write_file(dir.path(), "news.tsv", NEWS);
        let behaviors = write_file(
            dir.path(),
            "behaviors.tsv",
            "1\tU1\tnot-a-date\tN1\tN3-1 N4-0\n\
             2\tU1\t11/13/2019 9:05:58 AM\tN1\tN3-x N4-0\n\
             3\tU1\t11/13/2019 9:05:58 AM\tN1\tN9-1 N4-0\n\
             4\tU1\t11/13/2019 9:05:58 AM\tN1\tN3-1 N4-0\n",
        );
        let (_, stats) = load_mind(&behaviors, &news, &LoadOptions::default()).unwrap();
        assert_eq!(stats.malformed_rows, 2);
        assert_eq!(stats.unknown_item_rows, 1);
        assert_eq!(stats.impressions, 1);
    }

    #[test]
    fn loader_is_deterministic_under_a_fixed_seed() {
        let dir = tempfile::tempdir().unwrap();
        let news = write_file(dir.path(), "news.tsv", NEWS);
        let mut rows = String::new();
        for day in 12..=14 {
            for u in 0..6 {
                rows.push_str(&format!(
                    "{}\tU{}\t11/{}/2019 1:00:00 AM\tN1 N2\tN3-1 N4-0 N5-0\n",
                    rows.len() + 1,
                    u,
                    day
                ));
            }
        }
        let behaviors = write_file(dir.path(), "behaviors.tsv", &rows);
        let opts = LoadOptions {
            seed: 9,
            ..Default::default()
        };
        let (a, sa) = load_mind(&behaviors, &news, &opts).unwrap();
        let (b, sb) = load_mind(&behaviors, &news, &opts).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.val.len(), b.val.len());
        assert_eq!(a.clients.len(), b.clients.len());
        for (ca, cb) in a.clients.iter().zip(&b.clients) {
            assert_eq!(ca.samples, cb.samples);
        }
        // ~20% of last-day clicks go to validation.
        let val_clicks: usize = a
            .val
            .iter()
            .map(|i| i.candidates.iter().filter(|(_, y)| *y).count())
            .sum();
        assert_eq!(val_clicks, 1); // 6 last-day clicks * 0.2 rounds to 1
    }

    #[test]
    fn click_log_converter_emits_parseable_mind_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = String::new();
        for i in 0..30 {
            log.push_str(&format!("u{}\tA{}\ttitle words {}\n", i % 3, i % 7, i % 7));
        }
        let clicks = write_file(dir.path(), "clicks.tsv", &log);
        let behaviors = dir.path().join("behaviors.tsv");
        let news = dir.path().join("news.tsv");
        convert_click_log(&clicks, &behaviors, &news, 20, 1).unwrap();
        let (ds, stats) = load_mind(&behaviors, &news, &LoadOptions::default()).unwrap();
        assert_eq!(stats.news, 7);
        assert!(stats.impressions > 0);
        assert!(!ds.clients.is_empty());
        // 20 sampled negatives per click.
        assert_eq!(stats.negatives, stats.positives * 20);
    }
}
