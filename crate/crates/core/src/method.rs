use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::maps::MapMethod;
use crate::swin::HeadKind;

/// The segmentation methods compared in the reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GradCam,
    SamMultiLabel,
    SamBinary,
    HgiSam,
    UNet,
}

impl Method {
    /// Segmentation table column order.
    pub const ALL: [Method; 5] = [
        Method::GradCam,
        Method::SamMultiLabel,
        Method::SamBinary,
        Method::HgiSam,
        Method::UNet,
    ];

    /// Detection table column order.
    pub const DETECTION: [Method; 4] = [Method::SamMultiLabel, Method::SamBinary, Method::HgiSam, Method::UNet];

    pub fn tag(self) -> &'static str {
        match self {
            Method::GradCam => "grad-cam",
            Method::SamMultiLabel => "sam-multilabel",
            Method::SamBinary => "sam-binary",
            Method::HgiSam => "hgi-sam",
            Method::UNet => "unet",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::GradCam => "Swin-Grad-CAM",
            Method::SamMultiLabel => "Swin-SAM Multi-label",
            Method::SamBinary => "Swin-SAM Binary",
            Method::HgiSam => "Swin-HGI-SAM",
            Method::UNet => "UNet",
        }
    }

    /// Map algorithm behind an attention-based method.
    pub fn map_method(self) -> Option<MapMethod> {
        match self {
            Method::GradCam => Some(MapMethod::GradCam),
            Method::SamMultiLabel | Method::SamBinary => Some(MapMethod::Sam),
            Method::HgiSam => Some(MapMethod::HgiSam),
            Method::UNet => None,
        }
    }

    /// Classifier head the method's maps are read from.
    pub fn head_kind(self) -> Option<HeadKind> {
        match self {
            Method::GradCam | Method::HgiSam => Some(HeadKind::BinaryTwoLogit),
            Method::SamBinary => Some(HeadKind::BinaryOneLogit),
            Method::SamMultiLabel => Some(HeadKind::MultiLabel),
            Method::UNet => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Usage(format!("unknown method '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert!("rollout".parse::<Method>().is_err());
    }
}
