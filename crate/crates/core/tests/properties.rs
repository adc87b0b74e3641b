use proptest::prelude::*;

use smem_core::embedding::{cosine, Embedding};
use smem_core::formats::{decode_mask, encode_mask};
use smem_core::mask::ObjectMask;
use smem_core::memory::{MemoryBank, PayloadHandle, UpdateBranch};
use smem_core::metrics::{boundary_f, iou};

fn embedding(dim: usize) -> impl Strategy<Value = Embedding> {
    prop::collection::vec(-4.0f64..4.0, dim).prop_map(|v| Embedding::new(v).unwrap())
}

fn mask(h: usize, w: usize) -> impl Strategy<Value = ObjectMask> {
    prop::collection::vec(any::<bool>(), h * w).prop_map(move |b| ObjectMask::from_bits(h, w, b).unwrap())
}

fn mask_pair() -> impl Strategy<Value = (ObjectMask, ObjectMask)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| (mask(h, w), mask(h, w)))
}

proptest! {
    #[test]
    fn cosine_is_bounded_and_reflexive(a in embedding(6), b in embedding(6)) {
        let c = cosine(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(&b, &a).unwrap());
        if a.norm() > 0.0 {
            prop_assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn bank_grows_by_at_most_one(
        keys in prop::collection::vec(embedding(4), 2..40),
        tau in -1.0f64..=1.0,
        lambda in 0.0f64..3.0,
    ) {
        let mut bank = MemoryBank::new(lambda, tau, None).unwrap();
        bank.insert_protected(0, keys[0].clone(), PayloadHandle(0)).unwrap();
        for (t, key) in keys.iter().enumerate().skip(1) {
            let before = bank.len();
            let report = bank.update(key.clone(), t, PayloadHandle(t as u64)).unwrap();
            prop_assert_eq!(report.size_after, bank.len());
            match report.branch {
                UpdateBranch::Replaced => {
                    prop_assert_eq!(bank.len(), before);
                    prop_assert!(!report.removed.unwrap().protected);
                }
                UpdateBranch::Appended => prop_assert_eq!(bank.len(), before + 1),
                UpdateBranch::CapacityEvicted => prop_assert!(false, "no capacity limit set"),
            }
            prop_assert_eq!(bank.protected_count(), 1);
            prop_assert_eq!(bank.newest_frame(), Some(t));
        }
        if tau <= -1.0 {
            prop_assert!(bank.len() <= 2);
        }
    }

    #[test]
    fn capacity_is_never_exceeded(
        keys in prop::collection::vec(embedding(3), 2..40),
        cap in 2usize..6,
    ) {
        let mut bank = MemoryBank::new(1.0, 1.0, Some(cap)).unwrap();
        bank.insert_protected(0, keys[0].clone(), PayloadHandle(0)).unwrap();
        for (t, key) in keys.iter().enumerate().skip(1) {
            bank.update(key.clone(), t, PayloadHandle(t as u64)).unwrap();
            prop_assert!(bank.len() <= cap);
        }
    }

    #[test]
    fn eviction_ignores_query_scale(
        keys in prop::collection::vec(embedding(5), 3..20),
        query in embedding(5),
        exp in -8i32..8,
    ) {
        let mut bank = MemoryBank::new(1.0, 1.0, None).unwrap();
        bank.insert_protected(0, keys[0].clone(), PayloadHandle(0)).unwrap();
        for (t, key) in keys.iter().enumerate().skip(1) {
            bank.update(key.clone(), t, PayloadHandle(t as u64)).unwrap();
        }
        let now = keys.len();
        let scaled = query.scaled(2f64.powi(exp)).unwrap();
        let a = bank.evict_candidate(&query, now).unwrap().map(|c| c.frame_index);
        let b = bank.evict_candidate(&scaled, now).unwrap().map(|c| c.frame_index);
        prop_assert_eq!(a, b);
        prop_assert!(a.is_some());
    }

    #[test]
    fn iou_is_symmetric_and_bounded((a, b) in mask_pair()) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn boundary_f_is_one_on_itself((a, b) in mask_pair(), tol in 0.0f64..3.0) {
        prop_assert_eq!(boundary_f(&a, &a, tol).unwrap(), 1.0);
        let f = boundary_f(&a, &b, tol).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn smrl_round_trips(
        (h, w, labels) in (1usize..10, 1usize..10)
            .prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(0u32..4, h * w)))
    ) {
        let masks: Vec<(u32, ObjectMask)> = (1..4)
            .map(|id| (id * 7, ObjectMask::from_bits(h, w, labels.iter().map(|&l| l == id).collect()).unwrap()))
            .collect();
        let refs: Vec<(u32, &ObjectMask)> = masks.iter().map(|(id, m)| (*id, m)).collect();
        let text = encode_mask(h, w, &refs).unwrap();
        let back = decode_mask(text.as_bytes()).unwrap();
        prop_assert_eq!((back.height, back.width), (h, w));
        prop_assert_eq!(&back.objects, &masks);
        let again: Vec<(u32, &ObjectMask)> = back.objects.iter().map(|(id, m)| (*id, m)).collect();
        prop_assert_eq!(encode_mask(h, w, &again).unwrap(), text);
    }
}
