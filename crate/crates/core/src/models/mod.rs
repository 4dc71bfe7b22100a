//! Desk-scale networks: WGAN generator and critic, image classifier and
//! gated recurrent language models.

mod layout;
mod lm;
mod nets;

pub use layout::{CompiledLoss, Entry, Init, Layout};
pub use lm::{
    lm_batch, lm_joint_prob, lm_loss_graph, lm_next_dist, lm_sample, CharLm, LanguageModel, LmArch, LmState,
    RecurrentLm, WordLm,
};
pub use nets::{
    classifier_batch, classifier_loss_graph, classify, disc_batch, disc_loss_graph, gaussian_tensor, gen_batch,
    gen_loss_graph, mix_coefficients, ClassifierNet, DenseArch, DiscriminatorNet, GeneratorNet,
};
