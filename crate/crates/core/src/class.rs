use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The three audio categories, in logit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Noise,
    Music,
    Speech,
}

pub const CLASSES: [Class; 3] = [Class::Noise, Class::Music, Class::Speech];

impl Class {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        CLASSES.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Noise => "noise",
            Class::Music => "music",
            Class::Speech => "speech",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CLASSES
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::data(format!("unknown class `{s}`")))
    }
}

/// Ground-truth label of a timeline frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameLabel {
    Class(Class),
    Silence,
}

impl FrameLabel {
    pub fn name(self) -> &'static str {
        match self {
            FrameLabel::Class(c) => c.name(),
            FrameLabel::Silence => "silence",
        }
    }

    pub fn class(self) -> Option<Class> {
        match self {
            FrameLabel::Class(c) => Some(c),
            FrameLabel::Silence => None,
        }
    }
}

impl fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrameLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "silence" {
            Ok(FrameLabel::Silence)
        } else {
            s.parse().map(FrameLabel::Class)
        }
    }
}
