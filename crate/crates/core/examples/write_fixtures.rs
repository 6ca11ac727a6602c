//! Regenerates the files under `fixtures/`:
//!
//! ```text
//! cargo run -p angular-pool --example write_fixtures -- fixtures
//! ```

use std::fs::{self, File};
use std::path::PathBuf;

use angular_pool::backtest::{bundled_config, bundled_fixture};
use angular_pool::ingest::write_hub_csv;
use angular_pool::verify::gaussian_cdf;

fn main() -> angular_pool::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    fs::create_dir_all(&dir)?;
    write_hub_csv(
        &bundled_fixture(),
        File::create(dir.join("forecasts.csv"))?,
        File::create(dir.join("truth.csv"))?,
    )?;
    fs::write(dir.join("config.json"), bundled_config().to_json() + "\n")?;

    // The two-Gaussian example, N(-0.15, 0.1^2) and N(0.15, 0.1^2), at 199 levels.
    let levels: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
    for (name, mean) in [("gaussian_left", -0.15), ("gaussian_right", 0.15)] {
        fs::write(dir.join(format!("{name}.json")), gaussian_cdf(mean, 0.1, &levels)?.to_json() + "\n")?;
    }
    Ok(())
}
