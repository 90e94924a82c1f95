//! Sleep-stage labels and raw-code mapping.

use crate::error::{Error, Result};

/// Number of scored classes.
pub const N_CLASSES: usize = 5;

/// Sentinel byte for epochs that carry no usable stage label.
pub const EXCLUDED_CODE: u8 = 255;

/// The five scored sleep stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum SleepStage {
    Wake = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

impl SleepStage {
    pub const ALL: [SleepStage; N_CLASSES] = [
        SleepStage::Wake,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::Rem,
    ];

    pub fn from_index(i: usize) -> Option<SleepStage> {
        SleepStage::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepStage::Wake => "W",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::Rem => "R",
        }
    }
}

impl std::fmt::Display for SleepStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A stage slot: either one of the five scored stages or excluded from
/// training and scoring entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Stage(SleepStage),
    Excluded,
}

impl Label {
    pub fn as_byte(self) -> u8 {
        match self {
            Label::Stage(s) => s as u8,
            Label::Excluded => EXCLUDED_CODE,
        }
    }

    pub fn from_byte(b: u8) -> Option<Label> {
        match b {
            EXCLUDED_CODE => Some(Label::Excluded),
            _ => SleepStage::from_index(b as usize).map(Label::Stage),
        }
    }

    pub fn stage(self) -> Option<SleepStage> {
        match self {
            Label::Stage(s) => Some(s),
            Label::Excluded => None,
        }
    }

    pub fn is_excluded(self) -> bool {
        matches!(self, Label::Excluded)
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Stage(s) => s.fmt(f),
            Label::Excluded => f.write_str("EXCLUDED"),
        }
    }
}

/// Raw annotation code schemes accepted by [`map_stages`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelScheme {
    /// Rechtschaffen–Kales: 0=W, 1..=4 NREM depth, 5=REM, 6=Movement,
    /// 9=Unknown.
    Rk,
    /// AASM: 0=W, 1=N1, 2=N2, 3=N3, 4=REM, 255=unscored.
    Aasm,
}

impl LabelScheme {
    fn name(self) -> &'static str {
        match self {
            LabelScheme::Rk => "R&K",
            LabelScheme::Aasm => "AASM",
        }
    }
}

/// Maps raw per-epoch stage codes into [`Label`]s.
///
/// R&K stage 4 is merged into N3; Movement (6) and Unknown (9) become
/// [`Label::Excluded`]. AASM codes map one-to-one, with 255 excluded.
/// Any other code is a mapping error naming the code and its position.
pub fn map_stages(raw: &[u8], scheme: LabelScheme) -> Result<Vec<Label>> {
    raw.iter()
        .enumerate()
        .map(|(index, &code)| {
            let mapped = match scheme {
                LabelScheme::Rk => match code {
                    0 => Some(Label::Stage(SleepStage::Wake)),
                    1 => Some(Label::Stage(SleepStage::N1)),
                    2 => Some(Label::Stage(SleepStage::N2)),
                    3 | 4 => Some(Label::Stage(SleepStage::N3)),
                    5 => Some(Label::Stage(SleepStage::Rem)),
                    6 | 9 => Some(Label::Excluded),
                    _ => None,
                },
                LabelScheme::Aasm => Label::from_byte(code),
            };
            mapped.ok_or(Error::StageMapping {
                code,
                index,
                scheme: scheme.name(),
            })
        })
        .collect()
}
