//! Loop unrolling is just syntax: a `for` loop over a literal list must
//! behave exactly like writing the iterations out by hand.
//!
//! The manual versions deliberately use *different* variable names per
//! iteration (the way a person would), so the comparison cannot succeed by
//! textual accident — the two programs parse to different IR and must agree
//! under the executor on the same rows and seed.

use std::collections::BTreeMap;

use capsuleguard::executor::{execute, ExecOutcome, Output};
use capsuleguard::frontend::parse_program;
use capsuleguard::ir::{Program, Statement};
use capsuleguard_testkit::gen::rng;
use capsuleguard_testkit::programs::random_table;
use rand::prelude::*;

const COLUMNS: [&str; 5] = ["category", "age", "amount", "score", "name"];
const NUMERIC: [&str; 3] = ["age", "amount", "score"];
const NUMBER_LITERALS: [&str; 8] = ["-10", "0", "0.5", "18", "21", "65", "100", "250"];

/// One generated scenario: the loop program and its hand-unrolled twin.
struct LoopCase {
    looped: String,
    manual: String,
}

fn random_loop_case(r: &mut impl Rng) -> LoopCase {
    let n_items = r.gen_range(1..=4);
    let trailing = r.gen_bool(0.5);

    let mut looped = String::from("df = read_capsule(\"t\")\n");
    let mut manual = looped.clone();
    let mut last = "df".to_string();

    match r.gen_range(0..3) {
        // A filter whose cutoff is the loop variable.
        0 => {
            let column = *NUMERIC.choose(r).unwrap();
            let cmp = if r.gen_bool(0.5) { ">=" } else { "<=" };
            let items: Vec<&str> =
                (0..n_items).map(|_| *NUMBER_LITERALS.choose(r).unwrap()).collect();
            looped.push_str(&format!("for cut in [{}]:\n", items.join(", ")));
            looped.push_str(&format!("    df = df[df[\"{column}\"] {cmp} cut]\n"));
            for (i, item) in items.iter().enumerate() {
                let next = format!("u{}", i + 1);
                manual.push_str(&format!(
                    "{next} = {last}[{last}[\"{column}\"] {cmp} {item}]\n"
                ));
                last = next;
            }
        }
        // A pseudonymization whose column is the loop variable.
        1 => {
            let n_cols = r.gen_range(1..=3);
            let items: Vec<&str> = COLUMNS.choose_multiple(r, n_cols).copied().collect();
            let quoted: Vec<String> = items.iter().map(|c| format!("\"{c}\"")).collect();
            looped.push_str(&format!("for col in [{}]:\n", quoted.join(", ")));
            looped.push_str("    df = hash_column(df, col)\n");
            for (i, item) in items.iter().enumerate() {
                let next = format!("u{}", i + 1);
                manual.push_str(&format!("{next} = hash_column({last}, \"{item}\")\n"));
                last = next;
            }
        }
        // A two-statement body: filter, then pseudonymize, rebinding the
        // accumulator through an intermediate name.
        _ => {
            let column = *NUMERIC.choose(r).unwrap();
            let items: Vec<&str> =
                (0..n_items).map(|_| *NUMBER_LITERALS.choose(r).unwrap()).collect();
            looped.push_str(&format!("for cut in [{}]:\n", items.join(", ")));
            looped.push_str(&format!("    t = df[df[\"{column}\"] <= cut]\n"));
            looped.push_str("    df = hash_column(t, \"name\")\n");
            for (i, item) in items.iter().enumerate() {
                let kept = format!("k{}", i + 1);
                let next = format!("u{}", i + 1);
                manual.push_str(&format!(
                    "{kept} = {last}[{last}[\"{column}\"] <= {item}]\n"
                ));
                manual.push_str(&format!("{next} = hash_column({kept}, \"name\")\n"));
                last = next;
            }
        }
    }

    // The binding from the loop's final iteration stays visible afterwards.
    if trailing {
        looped.push_str("z = hash_column(df, \"category\")\noutput(z)\n");
        manual.push_str(&format!("z = hash_column({last}, \"category\")\noutput(z)\n"));
    } else {
        looped.push_str("output(df)\n");
        manual.push_str(&format!("output({last})\n"));
    }

    LoopCase { looped, manual }
}

/// Output values in output-statement order, so programs with different
/// variable names stay comparable.
fn ordered_outputs<'a>(program: &Program, outcome: &'a ExecOutcome) -> Vec<&'a Output> {
    program
        .statements
        .iter()
        .filter_map(|s| match s {
            Statement::Output { var } => Some(&outcome.outputs[var]),
            Statement::Assign { .. } => None,
        })
        .collect()
}

#[test]
fn loops_behave_exactly_like_manual_unrolling() {
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let case = random_loop_case(&mut r);

        let looped = parse_program(&case.looped).unwrap_or_else(|e| {
            panic!("seed {seed}: loop program failed to parse: {e}\n{}", case.looped)
        });
        let manual = parse_program(&case.manual).unwrap_or_else(|e| {
            panic!("seed {seed}: manual program failed to parse: {e}\n{}", case.manual)
        });
        assert!(looped.validate().is_empty(), "seed {seed}: loop IR invalid");
        assert!(manual.validate().is_empty(), "seed {seed}: manual IR invalid");

        let columns: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
        let rows = r.gen_range(10..=30);
        let table = random_table(&mut r, &columns, rows);
        let tables = BTreeMap::from([("t".to_string(), table)]);

        let run_seed = r.gen();
        let from_loop = execute(&looped, &tables, run_seed, false).unwrap_or_else(|e| {
            panic!("seed {seed}: loop program failed to run: {e}\n{}", case.looped)
        });
        let by_hand = execute(&manual, &tables, run_seed, false).unwrap_or_else(|e| {
            panic!("seed {seed}: manual program failed to run: {e}\n{}", case.manual)
        });

        assert_eq!(
            ordered_outputs(&looped, &from_loop),
            ordered_outputs(&manual, &by_hand),
            "seed {seed}: results diverge\nloop version:\n{}\nmanual version:\n{}",
            case.looped,
            case.manual,
        );
    }
}
