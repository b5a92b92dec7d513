//! Entropy-weighted per-class prototypes of a single image.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::enms::norm;
use crate::pool::ImagePrediction;
use crate::uncertainty::binary_entropy;

/// Total entropy weight below which a class falls back to the plain mean.
pub const MIN_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prototype {
    pub category: usize,
    pub vector: Vec<f64>,
    #[serde(skip)]
    pub(crate) norm: f64,
}

impl Prototype {
    pub fn new(category: usize, vector: Vec<f64>) -> Self {
        let norm = norm(&vector);
        Self {
            category,
            vector,
            norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrototypeSet {
    pub image_id: String,
    pub by_class: BTreeMap<usize, Prototype>,
}

impl PrototypeSet {
    pub fn get(&self, category: usize) -> Option<&Prototype> {
        self.by_class.get(&category)
    }

    pub fn categories(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_class.keys().copied()
    }
}

/// Prototypes over every instance of the image.
pub fn image_prototypes(image: &ImagePrediction) -> PrototypeSet {
    prototypes_over(image, 0..image.instances.len())
}

/// Prototypes over a subset of instance indices, accumulated in the order
/// given.
pub fn prototypes_over(
    image: &ImagePrediction,
    indices: impl IntoIterator<Item = usize>,
) -> PrototypeSet {
    struct Acc {
        weighted: Vec<f64>,
        plain: Vec<f64>,
        weight: f64,
        count: usize,
    }

    let mut accs: BTreeMap<usize, Acc> = BTreeMap::new();
    for k in indices {
        let inst = &image.instances[k];
        let h = binary_entropy(inst.score);
        let acc = accs.entry(inst.category).or_insert_with(|| Acc {
            weighted: vec![0.0; inst.feature.len()],
            plain: vec![0.0; inst.feature.len()],
            weight: 0.0,
            count: 0,
        });
        for ((w, p), &f) in acc.weighted.iter_mut().zip(&mut acc.plain).zip(&inst.feature) {
            *w += h * f;
            *p += f;
        }
        acc.weight += h;
        acc.count += 1;
    }

    let by_class = accs
        .into_iter()
        .map(|(category, acc)| {
            let vector: Vec<f64> = if acc.weight < MIN_WEIGHT {
                let n = acc.count as f64;
                acc.plain.iter().map(|v| v / n).collect()
            } else {
                acc.weighted.iter().map(|v| v / acc.weight).collect()
            };
            (category, Prototype::new(category, vector))
        })
        .collect();

    PrototypeSet {
        image_id: image.image_id.clone(),
        by_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::InstancePrediction;
    use proptest::prelude::*;

    fn image(items: &[(usize, f64, Vec<f64>)]) -> ImagePrediction {
        ImagePrediction::new(
            "i",
            items
                .iter()
                .map(|(c, p, f)| InstancePrediction::new(*c, *p, f.clone()))
                .collect(),
        )
    }

    #[test]
    fn single_instance_is_its_feature() {
        let im = image(&[(2, 0.8, vec![0.3, -1.0, 2.0])]);
        let ps = image_prototypes(&im);
        assert_eq!(ps.get(2).unwrap().vector, vec![0.3, -1.0, 2.0]);
        assert_eq!(ps.categories().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn equal_scores_give_midpoint() {
        let im = image(&[(0, 0.7, vec![1.0, 3.0]), (0, 0.7, vec![3.0, -1.0])]);
        let v = image_prototypes(&im).get(0).unwrap().vector.clone();
        assert!((v[0] - 2.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_weighting() {
        let im = image(&[(1, 0.5, vec![1.0, 0.0]), (1, 0.9, vec![0.0, 1.0])]);
        let v = image_prototypes(&im).get(1).unwrap().vector.clone();
        // H(0.5) / (H(0.5) + H(0.9)) evaluated independently
        assert!((v[0] - 0.680_737_235_948_164).abs() < 1e-12);
        assert!((v[1] - 0.319_262_764_051_836).abs() < 1e-12);
    }

    #[test]
    fn certain_instances_fall_back_to_mean() {
        let im = image(&[(0, 1.0, vec![2.0, 0.0]), (0, 1.0, vec![0.0, 4.0])]);
        let v = image_prototypes(&im).get(0).unwrap().vector.clone();
        assert_eq!(v, vec![1.0, 2.0]);
    }

    #[test]
    fn separate_classes() {
        let im = image(&[
            (0, 0.5, vec![1.0, 0.0]),
            (3, 0.5, vec![0.0, 1.0]),
            (0, 0.5, vec![0.0, 1.0]),
        ]);
        let ps = image_prototypes(&im);
        assert_eq!(ps.categories().collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(ps.get(3).unwrap().vector, vec![0.0, 1.0]);
    }

    #[test]
    fn moving_toward_uncertainty_pulls_prototype() {
        let f1 = vec![1.0, 0.0];
        let f2 = vec![0.0, 1.0];
        let mut prev = f64::INFINITY;
        for p in [0.95, 0.9, 0.8, 0.7, 0.6, 0.5] {
            let im = image(&[(0, p, f1.clone()), (0, 0.8, f2.clone())]);
            let v = image_prototypes(&im).get(0).unwrap().vector.clone();
            let dist = ((v[0] - 1.0).powi(2) + v[1].powi(2)).sqrt();
            assert!(dist < prev);
            prev = dist;
        }
    }

    proptest! {
        #[test]
        fn convex_combination(items in proptest::collection::vec(
            (0usize..3, 0.0f64..=1.0, proptest::collection::vec(-5.0f64..5.0, 4)), 1..10)) {
            let im = image(&items);
            let ps = image_prototypes(&im);
            let present: std::collections::BTreeSet<usize> = items.iter().map(|x| x.0).collect();
            prop_assert_eq!(ps.categories().collect::<std::collections::BTreeSet<_>>(), present);
            for (c, proto) in &ps.by_class {
                let members: Vec<_> = items.iter().filter(|x| x.0 == *c).collect();
                let max_norm = members.iter().map(|x| norm(&x.2)).fold(0.0, f64::max);
                prop_assert!(proto.norm <= max_norm + 1e-9);
                for j in 0..4 {
                    let lo = members.iter().map(|x| x.2[j]).fold(f64::INFINITY, f64::min);
                    let hi = members.iter().map(|x| x.2[j]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(proto.vector[j] >= lo - 1e-9 && proto.vector[j] <= hi + 1e-9);
                }
            }
        }
    }
}
