//! Tabular outputs: training histories, rank profiles and weight matrices.

use std::io::Write;

use rapgnn_core::analysis::RankProfile;
use rapgnn_core::matrix::DenseMatrix;
use rapgnn_core::train::History;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per epoch. Missing metrics are empty fields.
pub fn write_history<W: Write>(out: W, history: &History) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = history.metric.name();
    w.write_record([
        "epoch".to_string(),
        "train_loss".into(),
        format!("train_{}", m),
        format!("val_{}", m),
        format!("test_{}", m),
        "wallclock_ms".into(),
    ])?;
    for r in &history.records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_metric.to_string(),
            opt(r.val_metric),
            opt(r.test_metric),
            r.wallclock_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `layer, rank, mean_variance`, tab-separated.
pub fn write_rank_profile<W: Write>(out: W, profile: &RankProfile) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    w.write_record(["layer", "rank", "mean_variance"])?;
    for (l, (r, v)) in profile.ranks.iter().zip(&profile.variances).enumerate() {
        w.write_record([l.to_string(), r.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A dense matrix as headerless tab-separated rows.
pub fn write_matrix<W: Write>(out: W, m: &DenseMatrix) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').has_headers(false).from_writer(out);
    for i in 0..m.rows() {
        w.write_record((0..m.cols()).map(|j| m.get(i, j).to_string()))?;
    }
    w.flush()?;
    Ok(())
}
