//! Evaluation: Hungarian-matched clustering mIoU and COCO-style mask AP.

pub mod hungarian;
pub mod instseg;
pub mod semseg;

pub use hungarian::{hungarian_match, Assignment};
pub use instseg::{mask_ap, match_instance_labels, ApResult, ApTriple, ClassMode, Protocol};
pub use semseg::{confusion_matrix, evaluate_semseg, miou, ConfusionMatrix, SemsegOptions, SemsegReport};
