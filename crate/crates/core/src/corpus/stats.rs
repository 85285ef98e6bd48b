use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, RawDialogue};
use crate::graph::UnitKind;

/// Unit and multi-parent counts in the layout of the corpus statistics table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub edu_count: usize,
    pub eeu_count: usize,
    pub mpdu_count: usize,
    pub mpdu3_count: usize,
    pub mpdu_gt3_count: usize,
}

impl AddAssign for CorpusStats {
    fn add_assign(&mut self, rhs: Self) {
        self.edu_count += rhs.edu_count;
        self.eeu_count += rhs.eeu_count;
        self.mpdu_count += rhs.mpdu_count;
        self.mpdu3_count += rhs.mpdu3_count;
        self.mpdu_gt3_count += rhs.mpdu_gt3_count;
    }
}

pub fn dialogue_stats(dialogue: &RawDialogue) -> Result<CorpusStats, CorpusError> {
    let flat = dialogue.to_dialogue()?;
    let mpdu = flat.graph.mpdu();
    Ok(CorpusStats {
        edu_count: dialogue.count_kind(UnitKind::Edu),
        eeu_count: dialogue.count_kind(UnitKind::Eeu),
        mpdu_count: mpdu.units.len(),
        mpdu3_count: mpdu.with_three_parents,
        mpdu_gt3_count: mpdu.with_more_than_three,
    })
}

/// Sums [`dialogue_stats`] over a preprocessed corpus. Fails if any dialogue
/// still has CDUs.
pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    let mut total = CorpusStats::default();
    for d in &corpus.dialogues {
        total += dialogue_stats(d)?;
    }
    Ok(total)
}
