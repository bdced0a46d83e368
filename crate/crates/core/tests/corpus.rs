use sero_core::corpus::{
    ingest_corpus, write_corpus, Corpus, CorpusPaths, IngestError, IngestOptions, IssueCode, VaccineCatalog,
};
use std::fs;
use std::path::Path;

const COUNTRIES: &str = "country,population,pop_density,gdp_pc,confirmed,rollout_start
AAA,1000000,120.5,15000,confirmed.csv,2021-01-01
BBB,2000000,40,3000,confirmed.csv,
";
const CONFIRMED: &str = "country,date,cum_confirmed
AAA,2021-01-01,1000
AAA,2021-01-11,2000
BBB,2021-01-05,500
BBB,2021-01-20,900
";
const DELIVERY: &str = "country,vaccine,doses
AAA,4,300
AAA,3,100
";
const SURVEYS: &str = "country,end_date,N,X,sens_tp,sens_fn,spec_tn,spec_fp
AAA,2021-01-10,1000,52,95,5,198,2
BBB,2021-01-15,500,20,0.9,,1,
";

fn write_set(dir: &Path, vaccination: &str) -> CorpusPaths {
    fs::write(dir.join("countries.csv"), COUNTRIES).unwrap();
    fs::write(dir.join("confirmed.csv"), CONFIRMED).unwrap();
    fs::write(dir.join("delivery.csv"), DELIVERY).unwrap();
    fs::write(dir.join("surveys.csv"), SURVEYS).unwrap();
    fs::write(dir.join("vaccination.csv"), vaccination).unwrap();
    CorpusPaths::in_dir(dir)
}

const GOOD_VACC: &str = "country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine
AAA,2021-01-08,300,,3;4,3=100;4=200
AAA,2021-01-04,100,0,4,
BBB,2021-01-12,50,10,4,
";

fn ingest(vacc: &str, opts: IngestOptions) -> Result<Corpus, IngestError> {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_set(dir.path(), vacc);
    ingest_corpus(&paths, &VaccineCatalog::bundled(), opts).map(|(c, _)| c)
}

#[test]
fn valid_set_is_indexed() {
    let c = ingest(GOOD_VACC, IngestOptions::default()).unwrap();
    assert_eq!(c.n_countries(), 2);
    assert_eq!(c.epoch.to_string(), "2021-01-01");
    assert_eq!(c.last_day, 19);
    // sorted by date within the country
    let a = &c.vaccination[0];
    assert_eq!(a.iter().map(|r| r.date).collect::<Vec<_>>(), vec![3, 7]);
    assert_eq!(a[1].vaccines_in_use, vec![2, 3]);
    assert_eq!(a[1].per_vaccine_doses.as_ref().unwrap()[3], 200);
    assert_eq!(c.trials.len(), 9);
    assert_eq!(c.surveys.len(), 2);
    assert_eq!(c.confirmed_ratio(0, 15).unwrap(), 0.002);
    assert_eq!(c.confirmed_ratio(1, 0).unwrap(), 0.0);
    assert!(c.confirmed_ratio(0, 20).is_err());
    let shares = c.delivery_shares().unwrap();
    assert_eq!(shares.row(0)[2], 0.25);
    assert_eq!(shares.row(1)[3], 0.75);
}

#[test]
fn empty_vaccination_file_is_malformed() {
    let err = ingest("country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine\n", IngestOptions::default())
        .unwrap_err();
    let issue = err.issue().unwrap();
    assert_eq!(issue.code, IssueCode::MalformedRow);
    assert_eq!(issue.message, "no records");
}

#[test]
fn fully_above_doses_is_an_invariant_violation() {
    let vacc = "country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine\nAAA,2021-01-04,100,101,4,\n";
    let err = ingest(vacc, IngestOptions::default()).unwrap_err();
    assert_eq!(err.issue().unwrap().code, IssueCode::InvariantViolation);
    assert_eq!(err.issue().unwrap().line, 2);
}

#[test]
fn decreasing_doses_fail_unless_repair_is_allowed() {
    let vacc = "country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine
AAA,2021-01-04,100,,4,
AAA,2021-01-05,90,,4,4=90
AAA,2021-01-06,120,,4,
";
    let err = ingest(vacc, IngestOptions::default()).unwrap_err();
    assert_eq!(err.issue().unwrap().code, IssueCode::InvariantViolation);

    let dir = tempfile::tempdir().unwrap();
    let paths = write_set(dir.path(), vacc);
    let (c, report) =
        ingest_corpus(&paths, &VaccineCatalog::bundled(), IngestOptions { allow_monotonic_repair: true }).unwrap();
    let doses: Vec<u64> = c.vaccination[0].iter().map(|r| r.cum_doses).collect();
    assert_eq!(doses, vec![100, 100, 120]);
    assert!(c.vaccination[0][1].per_vaccine_doses.is_none());
    assert!(report.issues.iter().all(|i| i.code == IssueCode::MonotonicRepair));
    assert_eq!(report.issues.len(), 2);
}

#[test]
fn duplicate_dates_are_rejected() {
    let vacc = "country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine
AAA,2021-01-04,100,,4,
AAA,2021-01-04,110,,4,
";
    let err = ingest(vacc, IngestOptions::default()).unwrap_err();
    assert_eq!(err.issue().unwrap().code, IssueCode::DuplicateDate);
}

#[test]
fn unknown_country_and_bad_ids_are_malformed() {
    let vacc = "country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine\nZZZ,2021-01-04,100,,4,\n";
    assert_eq!(ingest(vacc, IngestOptions::default()).unwrap_err().issue().unwrap().code, IssueCode::MalformedRow);
    let vacc = "country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine\nAAA,2021-01-04,100,,13,\n";
    assert_eq!(ingest(vacc, IngestOptions::default()).unwrap_err().issue().unwrap().code, IssueCode::MalformedRow);
    let vacc = "country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine\nAAA,2021-01-04,100,,4,4=99\n";
    assert_eq!(
        ingest(vacc, IngestOptions::default()).unwrap_err().issue().unwrap().code,
        IssueCode::InvariantViolation
    );
}

#[test]
fn report_serializes_as_issue_list() {
    let vacc = "country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine\nAAA,2021-01-04,100,101,4,\n";
    let IngestError::Rejected(report) = ingest(vacc, IngestOptions::default()).unwrap_err() else {
        panic!("expected rejection")
    };
    let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    let first = &v.as_array().unwrap()[0];
    for key in ["file", "line", "code", "message"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn emitted_corpus_round_trips() {
    let c = ingest(GOOD_VACC, IngestOptions::default()).unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus(&c, out.path()).unwrap();
    let catalog = VaccineCatalog::from_csv(&fs::read_to_string(out.path().join("vaccines.csv")).unwrap()).unwrap();
    let (back, _) = ingest_corpus(&CorpusPaths::in_dir(out.path()), &catalog, IngestOptions::default()).unwrap();
    assert_eq!(back, c);
    let again = tempfile::tempdir().unwrap();
    write_corpus(&back, again.path()).unwrap();
    for f in ["vaccination.csv", "delivery.csv", "surveys.csv", "countries.csv", "confirmed.csv", "trials.csv"] {
        assert_eq!(fs::read(out.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{f}");
    }
}
