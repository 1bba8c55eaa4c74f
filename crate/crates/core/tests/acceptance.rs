//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Runs without the test harness so the lines are
//! always visible.

mod common;

use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use fraktur::enrich::{
    load_source_csv, map_sources, mapping_csv, normalize_form, triage_stats, ColumnMap, Lang, MatchStatus, TriageLabel,
    DEFAULT_MATCH_THRESHOLD,
};
use fraktur::entry::SchemaId;
use fraktur::eval::metrics::{cer, levenshtein_seq, ro_ratio};
use fraktur::eval::report::{method_comparison, MethodResult};
use fraktur::jobs::{ExportFormat, JobConfig, CRASH_POINTS};
use fraktur::merger::{merge_fragments, DecisionKind, Fragment, FragmentSet, Subject, DEFAULT_THRESHOLD};
use fraktur::synth::{standard_pages, synth_entries};
use fraktur::tei::{Sense, TeiEntry};
use fraktur::tiler::{plan_tiles_dims, segment_ranges, TileMode, TilingSpec};

use common::*;

struct Gate {
    failures: usize,
}

impl Gate {
    fn check(&mut self, name: &str, budget: Duration, f: impl FnOnce() -> Result<String, String>) {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > budget => Err(format!("{detail}; over budget")),
            other => other,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        if result.is_err() {
            self.failures += 1;
        }
        println!("{tag} {name}: {detail} [{:.2}s, limit {}s]", took.as_secs_f64(), budget.as_secs());
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Every pair of sequences of length at most 8 over three symbols whose
/// combined length is at most 9.
fn metric_oracles() -> Result<String, String> {
    let seqs = all_sequences(b"abc", 8);
    let mut pairs = 0usize;
    for a in &seqs {
        for b in seqs.iter().filter(|b| a.len() + b.len() <= 9) {
            pairs += 1;
            let (lev, lev_o) = (levenshtein_seq(a, b), levenshtein_oracle(a, b));
            ensure(lev == lev_o, || format!("levenshtein({a:?}, {b:?}) = {lev}, oracle {lev_o}"))?;
            let (ro, ro_o) = (ro_ratio(a, b), ro_oracle(a, b));
            ensure(ro == ro_o, || format!("ro_ratio({a:?}, {b:?}) = {ro}, oracle {ro_o}"))?;
        }
    }
    Ok(format!("{pairs} pairs exact"))
}

fn cer_fixtures() -> Result<String, String> {
    let a = cer("lahbutaminne", "lahhutaminne").map_err(|e| e.to_string())?;
    ensure((a - 1.0 / 12.0).abs() <= 1e-9 && (a - 0.0833).abs() < 5e-5, || format!("got {a}"))?;
    let b = cer("ababab", "ab").map_err(|e| e.to_string())?;
    ensure(b == 2.0, || format!("ababab vs ab: {b}"))?;
    Ok(format!("{a:.4}, {b:.1}"))
}

fn method_deltas() -> Result<String, String> {
    let results: Vec<MethodResult> = [
        ("whole page", 0.495, 0.507, 0.370, 7184),
        ("two columns", 0.572, 0.687, 0.536, 13988),
        ("segments", 0.647, 0.710, 1.050, 57186),
    ]
    .iter()
    .map(|&(m, s, t, c, i)| MethodResult { method: m.into(), structural: s, textual: t, cost: c, input_tokens: i })
    .collect();
    let rows = method_comparison(&results, 0).map_err(|e| e.to_string())?;
    let deltas: Vec<String> = rows[1..]
        .iter()
        .flat_map(|r| r.cells().into_iter().skip(1))
        .map(|cell| cell.split_once(" (").map(|(_, d)| d.trim_end_matches(')').to_string()).unwrap_or_default())
        .collect();
    let expected = ["+15.6%", "+35.5%", "+45%", "+95%", "+30.7%", "+40.0%", "+184%", "+696%"];
    ensure(deltas == expected, || format!("rendered {deltas:?}"))?;
    Ok(deltas.join(" "))
}

fn tiling() -> Result<String, String> {
    let worked = segment_ranges(2400, 4, 0.25).map_err(|e| e.to_string())?;
    let starts: Vec<u32> = worked.iter().map(|r| r.0).collect();
    ensure(starts == [0, 554, 1108, 1662], || format!("worked case starts {starts:?}"))?;

    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let cases = std::cell::Cell::new(0u32);
    let strategy = (1u32..=6, 0u32..=50).prop_flat_map(|(n, o)| (Just(n), Just(o), (8 * n + 8)..6000u32));
    runner
        .run(&strategy, |(n, o_pct, height)| {
            cases.set(cases.get() + 1);
            let o = o_pct as f64 / 100.0;
            let ranges = segment_ranges(height, n, o).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(ranges.len(), n as usize);
            let cover = row_coverage(height, &ranges);
            prop_assert!(cover.iter().all(|&c| c >= 1), "uncovered row for H={} n={} o={}", height, n, o);
            let h = ranges[0].1 - ranges[0].0;
            let min_overlap = ((o * h as f64).floor() as u32).saturating_sub(1);
            for w in ranges.windows(2) {
                prop_assert!(w[0].0 < w[1].0, "starts not increasing for H={} n={} o={}", height, n, o);
                let shared = shared_rows(w[0], w[1]);
                prop_assert!(
                    shared >= min_overlap,
                    "overlap {} < {} for H={} n={} o={}",
                    shared,
                    min_overlap,
                    height,
                    n,
                    o
                );
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{} random cases, worked starts {starts:?}", cases.get()))
}

fn plan(mode: TileMode, n: u32, overlap: f64) -> fraktur::tiler::TilePlan {
    let spec = TilingSpec { mode, segments_per_column: n, overlap_fraction: overlap, ..TilingSpec::default() };
    plan_tiles_dims("p", 1000, 2400, &spec).expect("plan")
}

fn random_entry() -> impl Strategy<Value = TeiEntry> {
    ("[ab]{1,3}", "[ab]{0,3}").prop_map(|(orth, quote)| {
        let e = TeiEntry::new("x", orth);
        if quote.is_empty() {
            e
        } else {
            e.with_sense(Sense::translation(quote))
        }
    })
}

fn merge_properties() -> Result<String, String> {
    let cases = std::cell::Cell::new(0u32);
    let config = || Config { cases: 200, failure_persistence: None, ..Config::default() };

    // every input entry is accounted for exactly once
    let strategy = (
        1u32..=4,
        prop::sample::select(vec![0.0, 0.1, 0.25, 0.5]),
        prop::collection::vec(prop::collection::vec(random_entry(), 0..5), 8),
    );
    TestRunner::new(config())
        .run(&strategy, |(n, o, pool)| {
            cases.set(cases.get() + 1);
            let p = plan(TileMode::Segments, n, o);
            let fragments = p.tiles.iter().zip(pool).map(|(t, es)| Fragment::new(*t, es)).collect::<Vec<_>>();
            let inputs: usize = fragments.iter().map(|f| f.entries.len()).sum();
            let set = FragmentSet::new(p, fragments);
            let m = merge_fragments(&set, DEFAULT_THRESHOLD).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let mut seen = std::collections::HashSet::new();
            let mut kept = 0;
            for d in &m.decisions {
                if let Subject::Entry(r) = d.subject {
                    prop_assert!(seen.insert(r), "entry {:?} decided twice", r);
                    match d.kind {
                        DecisionKind::DroppedDuplicate => {
                            prop_assert!(d.keeper.is_some_and(|k| m.origins.contains(&k)), "dangling keeper")
                        }
                        _ => kept += 1,
                    }
                }
            }
            prop_assert_eq!(seen.len(), inputs);
            prop_assert_eq!(kept, m.entries.len());
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    // zero overlap merges by concatenation
    let strategy = (1u32..=4, prop::collection::vec(prop::collection::vec(random_entry(), 0..5), 8));
    TestRunner::new(config())
        .run(&strategy, |(n, pool)| {
            cases.set(cases.get() + 1);
            let p = plan(TileMode::Segments, n, 0.0);
            let fragments: Vec<_> = p.tiles.iter().zip(pool).map(|(t, es)| Fragment::new(*t, es)).collect();
            let concat: Vec<TeiEntry> = fragments.iter().flat_map(|f| f.entries.clone()).collect();
            let m = merge_fragments(&FragmentSet::new(p, fragments), DEFAULT_THRESHOLD)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(m.entries.len(), concat.len());
            prop_assert!(m.entries.iter().zip(&concat).all(|(a, b)| a.same_content(b)));
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    // a single fragment comes back unchanged
    TestRunner::new(config())
        .run(&prop::collection::vec(random_entry(), 0..12), |entries| {
            cases.set(cases.get() + 1);
            let p = plan(TileMode::WholePage, 1, 0.0);
            let set = FragmentSet::new(p.clone(), vec![Fragment::new(p.tiles[0], entries.clone())]);
            let m = merge_fragments(&set, DEFAULT_THRESHOLD).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(m.entries.len(), entries.len());
            prop_assert!(m.entries.iter().zip(&entries).all(|(a, b)| a.same_content(b)));
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    // reading a column through overlapping windows gives the column back
    let strategy = (
        1u32..=4,
        prop::collection::vec(0usize..14, 2),
        prop::collection::vec(0usize..100, 6),
        prop::collection::vec(0usize..3, 6),
    );
    let pool = synth_entries("w", 28);
    TestRunner::new(config())
        .run(&strategy, |(n, lens, cuts, dups)| {
            cases.set(cases.get() + 1);
            let p = plan(TileMode::Segments, n, 0.25);
            let mut truth = Vec::new();
            let mut fragments = Vec::new();
            for (c, &len) in lens.iter().enumerate() {
                let column: Vec<TeiEntry> = pool[c * 14..c * 14 + len].to_vec();
                truth.extend(column.iter().map(|e| e.orth.clone()));
                let mut bounds: Vec<usize> = cuts[..n as usize - 1].iter().map(|x| x % (len + 1)).collect();
                bounds.sort_unstable();
                bounds.insert(0, 0);
                bounds.push(len);
                for s in 0..n as usize {
                    let (a, b) = (bounds[s], bounds[s + 1]);
                    let back = if s == 0 { 0 } else { dups[s].min(a - bounds[s - 1]) };
                    let tile = p.tiles[c * n as usize + s];
                    fragments.push(Fragment::new(tile, column[a - back..b].to_vec()));
                }
            }
            let m = merge_fragments(&FragmentSet::new(p, fragments), DEFAULT_THRESHOLD)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let got: Vec<String> = m.entries.iter().map(|e| e.orth.clone()).collect();
            prop_assert_eq!(got, truth);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let cases = cases.get();
    ensure(cases >= 500, || format!("only {cases} cases"))?;
    Ok(format!("{cases} generated fragment sets"))
}

fn offline_end_to_end() -> Result<String, String> {
    let fx = Fixture::new(&standard_pages(), SchemaId::TeiSubset);
    fx.create_job("e2e", JobConfig { reference_dir: Some(fx.layout.reference.clone()), ..JobConfig::default() });
    let rt = fx.runtime();
    for n in 1..=3 {
        fx.store.advance_to_recognized("e2e", n, &rt).map_err(|e| e.to_string())?;
    }
    let reports = fx.store.evaluate("e2e", &fx.layout.reference).map_err(|e| e.to_string())?;
    let csv = fx.store.export("e2e", ExportFormat::Csv).map_err(|e| e.to_string())?;
    let tei = fx.store.export("e2e", ExportFormat::Tei).map_err(|e| e.to_string())?;
    ensure(csv.exists() && tei.exists(), || "exports missing".into())?;

    let perfect = &reports[0];
    ensure(
        perfect.field_cer.values().all(|&c| c == 0.0)
            && perfect.structural_similarity == 1.0
            && perfect.textual_similarity == 1.0
            && perfect.perfect_rate() == 1.0,
        || format!("perfect page scored {perfect:?}"),
    )?;
    let corrupted = &reports[2];
    ensure(corrupted.total_entries == 100 && corrupted.perfect_rate() == 0.41, || {
        format!("corrupted page: {}/{}", corrupted.perfect_entries, corrupted.total_entries)
    })?;
    Ok(format!("perfect page CER 0 / similarity 1.0 / rate 1.0; corrupted page rate {:.2}", corrupted.perfect_rate()))
}

fn triage() -> Result<String, String> {
    let mut labels = vec![TriageLabel::Correct; 277];
    labels.extend(vec![TriageLabel::MinorEdit; 38]);
    labels.extend(vec![TriageLabel::FullRevision; 27]);
    let s = triage_stats(&labels).map_err(|e| e.to_string())?;
    let got = (s.correct_pct, s.minor_edit_pct, s.full_revision_pct);
    ensure(s.total == 342 && got == (81.0, 11.1, 7.9), || format!("got {got:?}"))?;
    Ok(format!("{:.1}/{:.1}/{:.1} of {}", got.0, got.1, got.2, s.total))
}

fn crash_safety() -> Result<String, String> {
    for point in CRASH_POINTS {
        crash_and_resume(point).check().map_err(|e| format!("{point}: {e}"))?;
    }
    Ok(format!("{} crash points, no duplicate calls", CRASH_POINTS.len()))
}

fn enrichment_pivot() -> Result<String, String> {
    let cols = ColumnMap::default();
    let load = |text: &str, id: &str| load_source_csv(text, id, &cols).map_err(|e| e.to_string());
    let anchor = load("headword,equivalent\nUbbene,Apffel\nHobbune,Pferd\n", "gutsclaff")?;
    let others = vec![
        load("headword,equivalent,modern\nAun,Apffel,õun\nKuhlma,Hören,kuulma\n", "stahl")?,
        load("headword,equivalent,word_form\nõun,apffel,Oun\n", "goeseken")?,
        load(
            "headword,equivalent,example,example_de\nOun,Der Apffel,Ouna Südda.,Das Korn gehäuse im Apffel\nUbbi,Pferd,,\n",
            "vestring",
        )?,
    ];
    ensure(normalize_form("Der Apffel", Lang::De) == "apffel", || "pivot key".into())?;
    let (rows, _) = map_sources(&anchor, &others, DEFAULT_MATCH_THRESHOLD, None);
    let ubbene = &rows[0];
    ensure(ubbene.matches.iter().all(|m| m.status == MatchStatus::Exact && m.row.is_some()), || {
        format!("Ubbene matches {:?}", ubbene.matches)
    })?;
    let csv = mapping_csv(&rows, &anchor.source_id, &others);
    let expected = "Ubbene,Apffel,Aun,Apffel,õun,exact,õun,apffel,Oun,exact,Oun,Der Apffel,Ouna Südda.,Das Korn gehäuse im Apffel,exact";
    ensure(csv.contains(expected), || format!("mapping:\n{csv}"))?;
    Ok("Ubbene/Apffel linked to stahl, goeseken, vestring via \"apffel\"".into())
}

fn main() {
    let mut gate = Gate { failures: 0 };
    let s = Duration::from_secs;
    gate.check("metric oracle equivalence", s(60), metric_oracles);
    gate.check("CER fixtures", s(1), cer_fixtures);
    gate.check("method comparison deltas", s(1), method_deltas);
    gate.check("tiling properties", s(10), tiling);
    gate.check("merge conservation and idempotence", s(30), merge_properties);
    gate.check("offline end-to-end", s(60), offline_end_to_end);
    gate.check("triage arithmetic", s(1), triage);
    gate.check("crash safety", s(30), crash_safety);
    gate.check("enrichment pivot", s(1), enrichment_pivot);
    if gate.failures > 0 {
        println!("{} criterion/criteria failed", gate.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
