use super::{argmax, PredictionSet};
use crate::error::{shape_err, Error, Result};
use crate::nn::{ParamStore, Real, Tensor};

const ACC_PARAM: &str = "synthesis.acc";
const SUPPORT_PARAM: &str = "synthesis.support";

/// `Acc(p, q)`: how often classifier `p` was right when it predicted `q`
/// on the validation set, with the number of such predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyMatrix {
    pub classifiers: usize,
    pub classes: usize,
    /// row-major `classifiers x classes`
    pub acc: Vec<f64>,
    pub support: Vec<u32>,
}

impl AccuracyMatrix {
    pub fn uniform(classifiers: usize, classes: usize, value: f64) -> Self {
        Self {
            classifiers,
            classes,
            acc: vec![value; classifiers * classes],
            support: vec![0; classifiers * classes],
        }
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.acc[p * self.classes + q]
    }

    pub fn support(&self, p: usize, q: usize) -> u32 {
        self.support[p * self.classes + q]
    }

    /// Counts predictions per classifier. Cells that were never predicted
    /// take that classifier's overall accuracy and keep support 0.
    pub fn from_predictions(preds: &[PredictionSet], labels: &[u32], classes: usize) -> Result<Self> {
        let first = preds.first().ok_or_else(|| Error::Empty("no validation predictions".into()))?;
        if preds.len() != labels.len() {
            return Err(shape_err!("{} predictions for {} labels", preds.len(), labels.len()));
        }
        let classifiers = first.num_classifiers();
        let mut predicted = vec![0u32; classifiers * classes];
        let mut correct = vec![0u32; classifiers * classes];
        for (set, &label) in preds.iter().zip(labels) {
            if set.num_classifiers() != classifiers || set.logits.iter().any(|l| l.len() != classes) {
                return Err(shape_err!("prediction sets differ in shape"));
            }
            for (p, l) in set.logits.iter().enumerate() {
                let q = argmax(l);
                predicted[p * classes + q] += 1;
                if q as u32 == label {
                    correct[p * classes + q] += 1;
                }
            }
        }
        let n = preds.len() as f64;
        let mut acc = vec![0.0; classifiers * classes];
        for p in 0..classifiers {
            let row = p * classes..(p + 1) * classes;
            let overall = correct[row.clone()].iter().sum::<u32>() as f64 / n;
            for i in row {
                acc[i] = if predicted[i] == 0 {
                    overall
                } else {
                    correct[i] as f64 / predicted[i] as f64
                };
            }
        }
        Ok(Self {
            classifiers,
            classes,
            acc,
            support: predicted,
        })
    }

    /// Stores the table as two non-trainable parameters.
    pub fn store_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let dims = vec![self.classifiers, self.classes];
        let acc = Tensor::new(dims.clone(), self.acc.iter().map(|&v| T::of(v)).collect())?;
        let sup = Tensor::new(dims, self.support.iter().map(|&v| T::of(v as f64)).collect())?;
        for (name, t) in [(ACC_PARAM, acc), (SUPPORT_PARAM, sup)] {
            match store.id(name) {
                Some(id) => *store.tensor_mut(id) = t,
                None => {
                    store.add(name, t, false)?;
                }
            }
        }
        Ok(())
    }

    pub fn load_from<T: Real>(store: &ParamStore<T>) -> Result<Self> {
        let get = |name: &str| {
            store
                .id(name)
                .map(|id| store.tensor(id))
                .ok_or_else(|| Error::Validation(format!("checkpoint has no {name:?} table")))
        };
        let (acc, sup) = (get(ACC_PARAM)?, get(SUPPORT_PARAM)?);
        let [classifiers, classes] = <[usize; 2]>::try_from(acc.dims()).map_err(|_| shape_err!("accuracy table must be 2-D"))?;
        if sup.dims() != acc.dims() {
            return Err(shape_err!("support table dims {:?} differ from {:?}", sup.dims(), acc.dims()));
        }
        Ok(Self {
            classifiers,
            classes,
            acc: acc.data().iter().map(|v| v.as_f64()).collect(),
            support: sup.data().iter().map(|v| v.as_f64().round() as u32).collect(),
        })
    }
}

/// `out = sum_p Acc(p, argmax l_p) * l_p` over every classifier, with
/// argmax ties going to the lowest class index.
pub fn synthesize(preds: &PredictionSet, acc: &AccuracyMatrix) -> Result<Vec<f32>> {
    synthesize_subset(preds, acc, 0..preds.num_classifiers())
}

pub(crate) fn synthesize_subset(
    preds: &PredictionSet,
    acc: &AccuracyMatrix,
    which: impl IntoIterator<Item = usize>,
) -> Result<Vec<f32>> {
    if preds.num_classifiers() != acc.classifiers || preds.logits.iter().any(|l| l.len() != acc.classes) {
        return Err(shape_err!(
            "predictions from {} classifiers do not match a {}x{} accuracy table",
            preds.num_classifiers(),
            acc.classifiers,
            acc.classes
        ));
    }
    let mut out = vec![0.0f64; acc.classes];
    for p in which {
        let l = &preds.logits[p];
        let weight = acc.get(p, argmax(l));
        out.iter_mut().zip(l).for_each(|(o, &v)| *o += weight * v as f64);
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

/// Arithmetic mean of all classifier logits.
pub fn average_predictions(preds: &PredictionSet) -> Result<Vec<f32>> {
    let first = preds.logits.first().ok_or_else(|| Error::Empty("no classifier logits".into()))?;
    let mut out = vec![0.0f64; first.len()];
    for l in &preds.logits {
        if l.len() != out.len() {
            return Err(shape_err!("classifier logits differ in length"));
        }
        out.iter_mut().zip(l).for_each(|(o, &v)| *o += v as f64);
    }
    let n = preds.logits.len() as f64;
    Ok(out.into_iter().map(|v| (v / n) as f32).collect())
}
