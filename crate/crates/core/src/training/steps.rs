//! Single optimisation steps for the three stages.

use super::denoise::DenoiseExample;
use super::optim::{adamw_update, AdamState, AdamWConfig};
use crate::error::{Error, Result};
use crate::model::hivt5::teacher_forcing;
use crate::model::vocab::{DENOISE_TASK, START};
use crate::model::{HiVt5Model, PageInput, PATCH_FEATURES};
use crate::nn::ParamGroup;
use crate::tensor::{no_grad, Tensor};

/// A question over a document, ready for the model.
#[derive(Debug, Clone)]
pub struct QaItem {
    pub pages: Vec<PageInput>,
    /// Page vectors computed ahead of time by a frozen encoder.
    pub encoded: Option<Vec<Tensor>>,
    pub answer: Vec<usize>,
    pub answer_page: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QaLosses {
    pub answer: f64,
    pub page: f64,
}

/// A single page prepared for denoising: corrupted input plus target.
pub fn denoise_page_input(example: &DenoiseExample, visual: Option<Vec<[f64; PATCH_FEATURES]>>) -> PageInput {
    PageInput {
        task: DENOISE_TASK,
        question: Vec::new(),
        ocr: example.input_ids.clone(),
        boxes: example.input_boxes.clone(),
        visual,
        page_index: 0,
    }
}

/// Denoising loss: the decoder sees only the page's M [PAGE] vectors.
pub fn denoise_loss(model: &HiVt5Model, page: &PageInput, target: &[usize]) -> Result<Tensor> {
    let vectors = model.encode_page(page)?.vectors;
    let mut input = vec![START];
    input.extend_from_slice(&target[..target.len() - 1]);
    model.decode(&vectors, &input)?.cross_entropy(target, None)
}

/// Page cross-entropy over all `P_max` slots or over present pages only.
pub fn page_loss(page_logits: &Tensor, n_pages: usize, answer_page: usize, all_slots: bool) -> Result<Tensor> {
    let logits = if all_slots {
        page_logits.clone()
    } else {
        page_logits.narrow(0, n_pages)?
    };
    let n = logits.numel();
    logits.reshape(&[1, n])?.cross_entropy(&[answer_page], None)
}

/// Answer and page losses for one item (graph retained for backward).
pub fn qa_losses(model: &HiVt5Model, item: &QaItem) -> Result<(Tensor, Tensor)> {
    let vectors = match &item.encoded {
        Some(v) => v.clone(),
        None => model.encode_document(&item.pages)?,
    };
    let n_pages = vectors.len();
    if item.answer_page >= n_pages {
        return Err(Error::Index(format!("answer page {} of a {n_pages}-page document", item.answer_page)));
    }
    let out = model.forward_encoded(vectors, Some(&item.answer))?;
    let target = teacher_forcing(&item.answer).1;
    let answer = out.answer_logits.expect("target given").cross_entropy(&target, None)?;
    let page = page_loss(&out.page_logits, n_pages, item.answer_page, model.config.page_loss_all_slots)?;
    Ok((answer, page))
}

/// One pretraining update over a batch of single-page examples; returns the
/// mean loss.
pub fn pretrain_step(
    model: &mut HiVt5Model,
    state: &mut AdamState,
    cfg: &AdamWConfig,
    batch: &[(PageInput, Vec<usize>)],
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (page, target) in batch {
        let loss = denoise_loss(model, page, target)?;
        total += loss.item();
        loss.scale(scale).backward()?;
    }
    let lr = adamw_update(&mut model.store, state, cfg)?;
    Ok((total * scale, lr))
}

fn qa_step(model: &mut HiVt5Model, state: &mut AdamState, cfg: &AdamWConfig, batch: &[QaItem]) -> Result<(QaLosses, f64)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let lambda = model.config.page_loss_weight;
    let (mut answer_sum, mut page_sum) = (0.0, 0.0);
    for item in batch {
        let (answer, page) = qa_losses(model, item)?;
        answer_sum += answer.item();
        page_sum += page.item();
        // with λ = 0 the page head stays out of the backward graph
        let total = if lambda == 0.0 {
            answer
        } else {
            answer.add(&page.scale(lambda))?
        };
        total.scale(scale).backward()?;
    }
    let lr = adamw_update(&mut model.store, state, cfg)?;
    Ok((
        QaLosses {
            answer: answer_sum * scale,
            page: page_sum * scale,
        },
        lr,
    ))
}

/// Joint answer + λ·page update over (typically two-page) views.
pub fn train_step(model: &mut HiVt5Model, state: &mut AdamState, cfg: &AdamWConfig, batch: &[QaItem]) -> Result<(QaLosses, f64)> {
    qa_step(model, state, cfg, batch)
}

/// Same losses as [`train_step`] on full-length documents; only decoder and
/// page head may change, so the encoder must be frozen.
pub fn finetune_step(model: &mut HiVt5Model, state: &mut AdamState, cfg: &AdamWConfig, batch: &[QaItem]) -> Result<(QaLosses, f64)> {
    if !model.store.is_frozen(ParamGroup::Encoder) {
        return Err(Error::Contract("finetune_step requires the encoder parameters to be frozen".into()));
    }
    qa_step(model, state, cfg, batch)
}

/// Fills `item.encoded` with page vectors; valid only while the encoder is
/// frozen, since the cache would otherwise go stale.
pub fn cache_encodings(model: &HiVt5Model, item: &mut QaItem) -> Result<()> {
    if !model.store.is_frozen(ParamGroup::Encoder) {
        return Err(Error::Contract("encodings may only be cached for a frozen encoder".into()));
    }
    item.encoded = Some(no_grad(|| model.encode_document(&item.pages))?);
    Ok(())
}
