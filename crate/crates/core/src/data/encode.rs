use super::NucleotideSequence;

/// Column order of the one-hot matrix.
pub const ONE_HOT_COLUMNS: [char; 4] = ['A', 'T', 'C', 'G'];

/// One-hot column of a base; `None` for `N`.
#[inline]
pub fn base_column(base: u8) -> Option<usize> {
    match base {
        b'A' => Some(0),
        b'T' => Some(1),
        b'C' => Some(2),
        b'G' => Some(3),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    /// `L` rows of four indicator columns in [`ONE_HOT_COLUMNS`] order.
    pub onehot: Vec<[u8; 4]>,
    /// `[1, 0]` for negatives, `[0, 1]` for positives.
    pub label: Option<[u8; 2]>,
    pub source_id: String,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.onehot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onehot.is_empty()
    }
}

/// A→[1,0,0,0], T→[0,1,0,0], C→[0,0,1,0], G→[0,0,0,1], N→all zeros.
pub fn one_hot_encode(seq: &NucleotideSequence) -> EncodedSequence {
    let onehot = seq
        .bases()
        .bytes()
        .map(|b| {
            let mut row = [0u8; 4];
            if let Some(c) = base_column(b) {
                row[c] = 1;
            }
            row
        })
        .collect();
    EncodedSequence {
        onehot,
        label: seq.label.map(|l| if l == 1 { [0, 1] } else { [1, 0] }),
        source_id: seq.id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn enc(s: &str) -> Vec<[u8; 4]> {
        one_hot_encode(&NucleotideSequence::new("t", s, None).unwrap()).onehot
    }

    #[test]
    fn adenine() {
        assert_eq!(enc("A"), vec![[1, 0, 0, 0]]);
    }

    #[test]
    fn column_order() {
        assert_eq!(enc("AC"), vec![[1, 0, 0, 0], [0, 0, 1, 0]]);
        assert_eq!(enc("TG"), vec![[0, 1, 0, 0], [0, 0, 0, 1]]);
    }

    #[test]
    fn unknown_base_has_no_channel() {
        assert_eq!(enc("N"), vec![[0, 0, 0, 0]]);
    }

    #[test]
    fn label_vector() {
        let s = NucleotideSequence::new("t", "A", Some(1)).unwrap();
        assert_eq!(one_hot_encode(&s).label, Some([0, 1]));
    }

    proptest! {
        #[test]
        fn rows_are_indicators(s in "[ACGTN]{1,120}") {
            let rows = enc(&s);
            prop_assert_eq!(rows.len(), s.len());
            for (row, b) in rows.iter().zip(s.bytes()) {
                let sum: u8 = row.iter().sum();
                prop_assert_eq!(sum, if b == b'N' { 0 } else { 1 });
            }
        }
    }
}
