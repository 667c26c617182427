//! Report files. Every table is a CSV with a fixed header; plots are CSV
//! curve data plus a gnuplot script that reads them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::depth::DepthReport;
use super::slam::SlamReport;
use crate::depth::write_depth_metrics_csv;
use crate::error::Result;
use crate::slam::write_slam_metrics_csv;

pub const SLAM_AGGREGATE_HEADER: [&str; 8] = [
    "method",
    "seeds",
    "mean_trans_err_pct",
    "rmse_trans_err_pct",
    "mean_rot_err_deg_per_m",
    "rmse_rot_err_deg_per_m",
    "total_failures",
    "mean_mdbf_m",
];
pub const SORTING_HEADER: [&str; 6] = ["seed", "percent", "ideal", "predicted", "random", "random_std"];
pub const LOSS_HEADER: [&str; 4] = ["seed", "epoch", "train_loss", "val_loss"];
pub const DEPTH_AGGREGATE_HEADER: [&str; 8] = ["split", "method", "seeds", "precision", "recall", "f1", "nll", "rmse_nll"];
pub const SIGMA2_HEADER: [&str; 3] = ["seed", "ensemble_sigma2", "mcdropout_sigma2"];
pub const FAILED_HEADER: [&str; 2] = ["seed", "error"];

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    written.push(path);
    Ok(BufWriter::new(f))
}

fn write_table<W: Write, T: Serialize>(out: W, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

const SLAM_PLOTS: &str = r#"set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 800,600
set output "sorting_curves.png"
set xlabel "features kept (%)"
set ylabel "mean reprojection error (px)"
seed = 0
plot "sorting_curves.csv" using ($1 == seed ? $2 : 1/0):3 with lines title "ideal", \
     "" using ($1 == seed ? $2 : 1/0):4 with lines title "introspection", \
     "" using ($1 == seed ? $2 : 1/0):5 with lines title "random"
set output "loss_history.png"
set xlabel "epoch"
set ylabel "loss"
set logscale y
plot "loss_history.csv" using ($1 == seed ? $2 : 1/0):3 with lines title "train", \
     "" using ($1 == seed ? $2 : 1/0):4 with lines title "validation"
"#;

const DEPTH_PLOTS: &str = r#"set datafile separator ","
set terminal pngcairo size 800,600
set output "depth_nll.png"
set style data histograms
set style fill solid 0.8
set ylabel "mean NLL"
set xtics rotate by -30
plot "< grep '^id,' depth_aggregates.csv" using 7:xtic(2) title "ID", \
     "< grep '^ood,' depth_aggregates.csv" using 7 title "OOD"
"#;

impl SlamReport {
    /// Writes the report tables and plot script into `dir` and returns the
    /// paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        write_slam_metrics_csv(&self.rows, create(dir, "slam_metrics.csv", &mut written)?)?;
        write_table(create(dir, "slam_aggregates.csv", &mut written)?, &SLAM_AGGREGATE_HEADER, &self.aggregates)?;
        let curves = self.curves.iter().flat_map(|(seed, c)| {
            (0..c.percent.len()).map(move |i| (seed, c.percent[i], c.ideal[i], c.predicted[i], c.random[i], c.random_std[i]))
        });
        write_table(create(dir, "sorting_curves.csv", &mut written)?, &SORTING_HEADER, curves)?;
        let losses = self.loss_histories.iter().flat_map(|(seed, h)| h.iter().map(move |r| (seed, r.epoch, r.train, r.val)));
        write_table(create(dir, "loss_history.csv", &mut written)?, &LOSS_HEADER, losses)?;
        write_table(create(dir, "slam_failed_seeds.csv", &mut written)?, &FAILED_HEADER, &self.failed)?;
        create(dir, "slam_plots.gp", &mut written)?.write_all(SLAM_PLOTS.as_bytes())?;
        Ok(written)
    }
}

impl DepthReport {
    /// Writes the per-split metric tables, aggregates, calibrated variances
    /// and the plot script into `dir` and returns the paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        write_depth_metrics_csv(&self.id_rows, create(dir, "depth_metrics_id.csv", &mut written)?)?;
        write_depth_metrics_csv(&self.ood_rows, create(dir, "depth_metrics_ood.csv", &mut written)?)?;
        write_table(create(dir, "depth_aggregates.csv", &mut written)?, &DEPTH_AGGREGATE_HEADER, &self.aggregates)?;
        write_table(create(dir, "depth_sigma2.csv", &mut written)?, &SIGMA2_HEADER, &self.sigma2)?;
        write_table(create(dir, "depth_failed_seeds.csv", &mut written)?, &FAILED_HEADER, &self.failed)?;
        create(dir, "depth_plots.gp", &mut written)?.write_all(DEPTH_PLOTS.as_bytes())?;
        Ok(written)
    }
}
