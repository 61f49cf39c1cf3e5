use std::io::Write;
use std::path::Path;

use dramforge::chain_io::{read_chain, read_restart, OutputPaths};
use dramforge::sampler::{run_with, ExistingOutputs, RunOptions};
use dramforge::spec::{ChainFormat, FileEncoding, Parallelism};
use dramforge::{resume, BuiltinTarget, Error, SimSpec};

fn spec(dir: &Path, name: &str) -> SimSpec {
    SimSpec::new(3)
        .chain_size(15_000)
        .adaptation_period(300)
        .seed(21)
        .output_prefix(dir.join(name).to_string_lossy())
}

fn target() -> BuiltinTarget {
    BuiltinTarget::standard_mvn(3)
}

fn interrupt(spec: &SimSpec, at: u64) {
    let opts = RunOptions { interrupt_at: Some(at), existing: ExistingOutputs::Overwrite, ..RunOptions::default() };
    match run_with(spec, &target(), &opts) {
        Err(Error::Interrupted { iteration }) => assert!(iteration >= at),
        other => panic!("expected an interrupt, got {:?}", other.map(|o| o.report.iterations)),
    }
}

/// Chain, restart, sample and report files; progress carries wall-clock times.
fn artifacts(spec: &SimSpec) -> Vec<Vec<u8>> {
    let p = OutputPaths::for_spec(spec);
    [&p.chain, &p.restart, &p.sample, &p.report].iter().map(|f| std::fs::read(f).unwrap()).collect()
}

fn check_resume_matches(reference: SimSpec, killed: SimSpec, at: u64) {
    run_with(&reference, &target(), &RunOptions::default()).unwrap();
    interrupt(&killed, at);
    resume(&killed, &target()).unwrap();
    let (a, b) = (artifacts(&reference), artifacts(&killed));
    for (k, name) in ["chain", "restart", "sample", "report"].iter().enumerate() {
        let mut a = a[k].clone();
        let mut b = b[k].clone();
        if *name == "report" {
            // The report echoes the prefix; mask it.
            let pa = reference.output_prefix.as_bytes();
            let pb = killed.output_prefix.as_bytes();
            a = String::from_utf8(a).unwrap().replace(std::str::from_utf8(pa).unwrap(), "P").into_bytes();
            b = String::from_utf8(b).unwrap().replace(std::str::from_utf8(pb).unwrap(), "P").into_bytes();
        }
        assert!(a == b, "{name} differs after resume");
    }
}

#[test]
fn resume_is_exact_in_every_layout() {
    let dir = tempfile::tempdir().unwrap();
    let layouts = [
        (ChainFormat::Compact, FileEncoding::Ascii),
        (ChainFormat::Compact, FileEncoding::Binary),
        (ChainFormat::Verbose, FileEncoding::Ascii),
        (ChainFormat::Verbose, FileEncoding::Binary),
    ];
    for (i, (format, enc)) in layouts.into_iter().enumerate() {
        let mk = |n: &str| spec(dir.path(), &format!("{n}{i}")).chain_format(format).file_encoding(enc);
        check_resume_matches(mk("ref"), mk("cut"), 5_000);
    }
}

#[test]
fn fork_join_resume_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |n: &str| spec(dir.path(), n).parallelism(Parallelism::SingleChain).num_workers(4);
    check_resume_matches(mk("ref"), mk("cut"), 7_000);
}

#[test]
fn torn_writes_are_discarded() {
    let dir = tempfile::tempdir().unwrap();
    let reference = spec(dir.path(), "ref");
    let killed = spec(dir.path(), "cut");
    run_with(&reference, &target(), &RunOptions::default()).unwrap();
    interrupt(&killed, 4_000);
    let paths = OutputPaths::for_spec(&killed);

    // Rows flushed after the checkpoint, then a half-written row.
    let on_disk = read_chain(&paths.chain).unwrap().rows.len();
    let reference_text = std::fs::read_to_string(OutputPaths::for_spec(&reference).chain).unwrap();
    let extra: Vec<&str> = reference_text.lines().skip(1 + on_disk).take(5).collect();
    let mut f = std::fs::OpenOptions::new().append(true).open(&paths.chain).unwrap();
    for line in &extra {
        writeln!(f, "{line}").unwrap();
    }
    write!(f, "{}", &extra[0][..extra[0].len() / 2]).unwrap();
    drop(f);

    // Half of a restart record.
    let restart_text = std::fs::read_to_string(&paths.restart).unwrap();
    let last_record: Vec<&str> = restart_text.lines().rev().skip(1).take_while(|l| *l != "end").collect();
    let mut f = std::fs::OpenOptions::new().append(true).open(&paths.restart).unwrap();
    for line in last_record.iter().rev().take(4) {
        writeln!(f, "{line}").unwrap();
    }
    write!(f, "iteration = 99").unwrap();
    drop(f);

    resume(&killed, &target()).unwrap();
    let a = std::fs::read(OutputPaths::for_spec(&reference).chain).unwrap();
    let b = std::fs::read(&paths.chain).unwrap();
    assert!(a == b);
    assert_eq!(read_restart(&paths.restart).unwrap(), read_restart(OutputPaths::for_spec(&reference).restart).unwrap());
}

#[test]
fn mismatched_or_finished_runs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), "x");
    assert!(matches!(resume(&s, &target()), Err(Error::RestartRefused(_))));

    interrupt(&s, 3_000);
    let other_seed = s.clone().seed(22);
    assert!(matches!(resume(&other_seed, &target()), Err(Error::RestartRefused(_))));
    let refuse = RunOptions { existing: ExistingOutputs::Refuse, ..RunOptions::default() };
    assert!(matches!(run_with(&s, &target(), &refuse), Err(Error::RestartRefused(_))));

    resume(&s, &target()).unwrap();
    assert!(matches!(resume(&s, &target()), Err(Error::AlreadyComplete(_))));
}

#[test]
fn checkpoints_track_adaptations() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), "ck");
    let out = run_with(&s, &target(), &RunOptions::default()).unwrap();
    let ckpts = read_restart(OutputPaths::for_spec(&s).restart).unwrap();
    assert_eq!(ckpts.len(), out.adaptation_history.len() + 1);
    assert!(ckpts[0].adaptation.is_none());
    assert_eq!(ckpts[0].iteration, 1);
    let recorded: Vec<_> = ckpts.iter().filter_map(|c| c.adaptation).collect();
    assert_eq!(recorded, out.adaptation_history);
    for (k, c) in ckpts.iter().enumerate() {
        assert_eq!(c.checkpoint_index, k as u64);
        let cov = &c.proposal.cov;
        assert!((cov - cov.transpose()).abs().max() <= 1e-12 * cov.abs().max());
    }
    // Covariance evolution settles towards the identity.
    let last = &ckpts.last().unwrap().proposal.cov;
    for i in 0..3 {
        assert!((last[(i, i)] - 1.0).abs() < 0.25, "{}", last[(i, i)]);
    }
}

#[test]
fn finished_run_can_be_extended() {
    let dir = tempfile::tempdir().unwrap();
    let short = spec(dir.path(), "ext").chain_size(6_000);
    run_with(&short, &target(), &RunOptions::default()).unwrap();
    let before = read_chain(OutputPaths::for_spec(&short).chain).unwrap();
    let long = short.clone().chain_size(12_000);
    let out = resume(&long, &target()).unwrap();
    assert_eq!(out.chain.total_weight(), 12_000);
    // Everything up to the last checkpoint of the short run is kept verbatim.
    let kept = read_restart(OutputPaths::for_spec(&long).restart).unwrap();
    let boundary = kept.iter().rfind(|c| c.iteration <= 6_000).unwrap().rows_emitted as usize;
    assert!(boundary > 0);
    assert_eq!(out.chain.rows[..boundary], before.rows[..boundary]);
}
