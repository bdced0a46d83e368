use super::{AccuracyEvidence, Corpus};
use std::fmt::Write as _;
use std::path::Path;

fn evidence(e: &AccuracyEvidence) -> (String, String) {
    match e {
        AccuracyEvidence::Counts { correct, incorrect } => (correct.to_string(), incorrect.to_string()),
        AccuracyEvidence::Fixed(v) => (v.to_string(), String::new()),
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes the corpus back out in the ingest format (plus `vaccines.csv` and a
/// shared `confirmed.csv`). Ingesting the result yields an equal corpus.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let date = |d: i64| corpus.date_of(d).format("%Y-%m-%d").to_string();
    let code = |i: usize| quote(&corpus.countries[i].code);

    let mut s = String::from("id,manufacturer,type,interval_days\n");
    for e in corpus.catalog.entries() {
        let _ = writeln!(s, "{},{},{},{}", e.vaccine_id, quote(&e.manufacturer_name), e.vtype, e.interval_days);
    }
    std::fs::write(dir.join("vaccines.csv"), s)?;

    let mut s = String::from("country,population,pop_density,gdp_pc,confirmed,rollout_start\n");
    let mut conf = String::from("country,date,cum_confirmed\n");
    for (i, c) in corpus.countries.iter().enumerate() {
        let rollout = c.rollout_start.map(date).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},confirmed.csv,{}", code(i), c.population, c.pop_density, c.gdp_per_capita, rollout);
        for &(d, n) in &c.confirmed {
            let _ = writeln!(conf, "{},{},{}", code(i), date(d), n);
        }
    }
    std::fs::write(dir.join("countries.csv"), s)?;
    std::fs::write(dir.join("confirmed.csv"), conf)?;

    let mut s = String::from("country,date,cum_doses,cum_fully,vaccines_in_use,per_vaccine\n");
    for reports in &corpus.vaccination {
        for r in reports {
            let fully = r.cum_fully.map(|y| y.to_string()).unwrap_or_default();
            let in_use: Vec<String> = r.vaccines_in_use.iter().map(|k| (k + 1).to_string()).collect();
            let per = r
                .per_vaccine_doses
                .as_ref()
                .map(|pv| pv.iter().enumerate().map(|(k, n)| format!("{}={n}", k + 1)).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{},{}", code(r.country), date(r.date), r.cum_doses, fully, in_use.join(";"), per);
        }
    }
    std::fs::write(dir.join("vaccination.csv"), s)?;

    let mut s = String::from("country,vaccine,doses\n");
    for d in &corpus.deliveries {
        for (k, a) in d.amounts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", code(d.country), k + 1, a);
        }
    }
    std::fs::write(dir.join("delivery.csv"), s)?;

    let mut s = String::from("manufacturer,dose,NV,nV,NC,nC\n");
    for t in &corpus.trials {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            quote(&t.manufacturer_name),
            t.dose_stage,
            t.vaccinated_size,
            t.vaccinated_cases,
            t.placebo_size,
            t.placebo_cases
        );
    }
    std::fs::write(dir.join("trials.csv"), s)?;

    let mut s = String::from("country,end_date,N,X,sens_tp,sens_fn,spec_tn,spec_fp\n");
    for sv in &corpus.surveys {
        let (tp, fnn) = evidence(&sv.sensitivity);
        let (tn, fp) = evidence(&sv.specificity);
        let _ = writeln!(s, "{},{},{},{},{tp},{fnn},{tn},{fp}", code(sv.country), date(sv.end_date), sv.n_samples, sv.n_positive);
    }
    std::fs::write(dir.join("surveys.csv"), s)
}
