use std::collections::BTreeMap;
use std::ops::AddAssign;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Pixel tallies over the valid pixels, building = positive.
pub fn confusion_counts(
    pred: ArrayView2<bool>,
    gt: ArrayView2<bool>,
    valid: ArrayView2<bool>,
) -> Result<ConfusionCounts> {
    if pred.dim() != gt.dim() || pred.dim() != valid.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?}, truth {:?}, valid {:?}",
            pred.dim(),
            gt.dim(),
            valid.dim()
        )));
    }
    let mut c = ConfusionCounts::default();
    ndarray::Zip::from(&pred).and(&gt).and(&valid).for_each(|&p, &g, &v| {
        if !v {
            return;
        }
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    });
    Ok(c)
}

/// `TP / (TP + FP + FN)` in `[0, 1]`; 1.0 when neither prediction nor truth
/// contains a building.
pub fn iou(c: &ConfusionCounts) -> f64 {
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        1.0
    } else {
        c.tp as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub city: String,
    pub counts: ConfusionCounts,
}

impl ImageScore {
    pub fn iou(&self) -> f64 {
        iou(&self.counts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityScore {
    pub city: String,
    pub images: usize,
    pub counts: ConfusionCounts,
}

impl CityScore {
    /// Percent, from the city's pooled counts.
    pub fn iou_percent(&self) -> f64 {
        100.0 * iou(&self.counts)
    }
}

/// Scores of one evaluation run. IoU values reported by the accessors are
/// percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    /// Sorted by city name.
    pub cities: Vec<CityScore>,
    pub config_hash: String,
    pub seconds: f64,
}

impl EvalReport {
    /// Mean of per-image IoU, percent. The primary aggregate.
    pub fn miou(&self) -> f64 {
        100.0 * self.images.iter().map(ImageScore::iou).sum::<f64>() / self.images.len() as f64
    }

    /// Mean of per-city pooled IoU, percent.
    pub fn miou_city_mean(&self) -> f64 {
        self.cities.iter().map(CityScore::iou_percent).sum::<f64>() / self.cities.len() as f64
    }

    pub fn city(&self, name: &str) -> Option<&CityScore> {
        self.cities.iter().find(|c| c.city == name)
    }
}

/// Pools per-image counts by city.
pub fn aggregate(images: Vec<ImageScore>, config_hash: &str, seconds: f64) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate: no images were scored".into()));
    }
    let mut cities: BTreeMap<&str, CityScore> = BTreeMap::new();
    for img in &images {
        let entry = cities.entry(&img.city).or_insert_with(|| CityScore {
            city: img.city.clone(),
            images: 0,
            counts: ConfusionCounts::default(),
        });
        entry.images += 1;
        entry.counts += img.counts;
    }
    let cities = cities.into_values().collect();
    Ok(EvalReport {
        images,
        cities,
        config_hash: config_hash.to_string(),
        seconds,
    })
}
