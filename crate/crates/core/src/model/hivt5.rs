//! The hierarchical model: every page is encoded on its own with M shared
//! [PAGE] tokens prepended; the M output vectors of each page are
//! concatenated into the document memory D, which the decoder reads and the
//! page head scores.

use super::config::HiVt5Config;
use super::input::{PageInput, SeqLayout};
use super::visual::PATCH_FEATURES;
use super::vocab::{Vocab, END, START};
use crate::error::{Error, Result};
use crate::nn::{Decoder, Encoder, Init, ParamGroup, ParamId, ParamStore, SpatialEmbedder};
use crate::rng::Rng;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone)]
pub struct PageHead {
    /// Shared scorer `[d_model, 1]` applied to every mean-pooled page.
    pub w: ParamId,
    /// Per-slot gain on the rectified page score `[P_max]`.
    pub gain: ParamId,
    /// Per-slot bias `[P_max]`.
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct HiVt5Model {
    pub config: HiVt5Config,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub embed: SpatialEmbedder,
    pub page_embeddings: ParamId,
    pub visual_proj: ParamId,
    pub visual_bias: ParamId,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub head: PageHead,
}

pub struct PageEncoding {
    /// K'_j: the M contextualised [PAGE] vectors, `[M, d_model]`.
    pub vectors: Tensor,
    /// Encoder self-attention per layer, `[heads, n, n]`.
    pub attentions: Vec<Tensor>,
    pub layout: SeqLayout,
}

pub struct ModelOutput {
    pub page_vectors: Vec<Tensor>,
    /// `[target_len, vocab_size]` when a target was given.
    pub answer_logits: Option<Tensor>,
    /// `[P_max]`; slots past the document are not masked here.
    pub page_logits: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    pub text: String,
    pub page: usize,
    /// Mean log-probability of the generated tokens (end token included).
    pub confidence: f64,
    pub page_logits: Vec<f64>,
}

/// Decoder input/target pair for teacher forcing: target = answer + end,
/// input = start + target shifted right.
pub fn teacher_forcing(answer: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut target = answer.to_vec();
    target.push(END);
    let mut input = vec![START];
    input.extend_from_slice(&target[..target.len() - 1]);
    (input, target)
}

/// Argmax over the first `n_pages` slots (first index on ties).
pub fn predict_page(page_logits: &[f64], n_pages: usize) -> usize {
    let mut best = 0;
    for (i, v) in page_logits.iter().enumerate().take(n_pages.max(1)) {
        if *v > page_logits[best] {
            best = i;
        }
    }
    best
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

impl HiVt5Model {
    pub fn new(mut config: HiVt5Config, vocab: Vocab, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        if vocab.n_sentinels() != config.n_sentinels {
            return Err(Error::Config(format!(
                "vocabulary has {} sentinels, config expects {}",
                vocab.n_sentinels(),
                config.n_sentinels
            )));
        }
        config.validate()?;
        let spec = config.attention_spec()?;
        let d = config.d_model;
        let mut rng = Rng::new(seed).fork("model-init");
        let mut store = ParamStore::new();
        let embed = SpatialEmbedder::new(
            &mut store,
            &mut rng,
            config.vocab_size,
            d,
            config.coord_buckets,
            config.coord_buckets,
            config.token_init_std,
            config.coord_init_std,
        );
        let g = ParamGroup::Encoder;
        let page_embeddings = store.add("page_tokens", g, &[config.page_tokens, d], Init::Normal(config.token_init_std), &mut rng);
        let visual_proj = store.add("visual.proj", g, &[PATCH_FEATURES, d], Init::Normal(1.0 / (PATCH_FEATURES as f64).sqrt()), &mut rng);
        let visual_bias = store.add("visual.bias", g, &[d], Init::Zeros, &mut rng);
        let encoder = Encoder::new(&mut store, &mut rng, spec, config.n_enc_layers, config.d_ff);
        let decoder = Decoder::new(&mut store, &mut rng, spec, config.n_dec_layers, config.d_ff);
        let h = ParamGroup::PageHead;
        let head = PageHead {
            w: store.add("page_head.w", h, &[d, 1], Init::Normal(1.0 / (d as f64).sqrt()), &mut rng),
            gain: store.add("page_head.gain", h, &[config.max_pages], Init::Zeros, &mut rng),
            bias: store.add("page_head.bias", h, &[config.max_pages], Init::Zeros, &mut rng),
        };
        Ok(Self {
            config,
            vocab,
            store,
            embed,
            page_embeddings,
            visual_proj,
            visual_bias,
            encoder,
            decoder,
            head,
        })
    }

    /// Segment lengths for `page` under an encoder budget of `budget`
    /// positions; the OCR tail is dropped to fit.
    pub fn layout(&self, page: &PageInput, budget: usize) -> Result<SeqLayout> {
        let mandatory = self.config.page_tokens + page.visual_len() + 1 + page.question.len();
        if mandatory > budget {
            return Err(Error::Config(format!(
                "[PAGE] tokens, visual patches and question need {mandatory} positions, budget is {budget}"
            )));
        }
        let ocr = page.ocr.len().min(budget - mandatory);
        Ok(SeqLayout {
            page_tokens: self.config.page_tokens,
            visual: page.visual_len(),
            question: 1 + page.question.len(),
            ocr,
            ocr_dropped: page.ocr.len() - ocr,
        })
    }

    fn embed_page(&self, page: &PageInput, layout: &SeqLayout) -> Result<Tensor> {
        let s = &self.store;
        let d = self.config.d_model;
        let mut parts = vec![s.get(self.page_embeddings).clone()];
        if let Some(v) = &page.visual {
            let flat: Vec<f64> = v.iter().flatten().copied().collect();
            let feats = Tensor::new(flat, &[v.len(), PATCH_FEATURES])?;
            parts.push(feats.matmul(s.get(self.visual_proj))?.add(s.get(self.visual_bias))?);
        }
        let mut ids = Vec::with_capacity(layout.question + layout.ocr);
        let mut boxes = Vec::with_capacity(ids.capacity());
        ids.push(page.task);
        ids.extend_from_slice(&page.question);
        boxes.resize(ids.len(), None);
        ids.extend_from_slice(&page.ocr[..layout.ocr]);
        boxes.extend(page.boxes[..layout.ocr].iter().map(|b| Some(*b)));
        parts.push(self.embed.embed(s, &ids, &boxes)?);
        let x = Tensor::concat(&parts)?;
        debug_assert_eq!(x.shape(), &[layout.len(), d]);
        Ok(x)
    }

    /// Encodes one page within the per-page budget L.
    pub fn encode_page(&self, page: &PageInput) -> Result<PageEncoding> {
        self.encode_page_with(page, self.config.page_len, None)
    }

    /// Encodes one page under an explicit budget. `ocr_visible`, when given,
    /// hides OCR positions (after truncation) from every query.
    pub fn encode_page_with(&self, page: &PageInput, budget: usize, ocr_visible: Option<&[bool]>) -> Result<PageEncoding> {
        if page.ocr.len() != page.boxes.len() {
            return Err(Error::Shape(format!("{} OCR ids but {} boxes", page.ocr.len(), page.boxes.len())));
        }
        let layout = self.layout(page, budget)?;
        let x = self.embed_page(page, &layout)?;
        let visible = match ocr_visible {
            Some(v) if v.len() != layout.ocr => {
                return Err(Error::Shape(format!("OCR mask of length {} for {} OCR tokens", v.len(), layout.ocr)))
            }
            Some(v) => {
                let mut full = vec![true; layout.ocr_start()];
                full.extend_from_slice(v);
                Some(full)
            }
            None => None,
        };
        let out = self.encoder.forward(&self.store, &x, visible.as_deref())?;
        Ok(PageEncoding {
            vectors: out.hidden.narrow(0, self.config.page_tokens)?,
            attentions: out.attentions,
            layout,
        })
    }

    fn check_page_count(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.config.max_pages {
            return Err(Error::Validation(format!(
                "document has {n} pages, the model accepts 1..={}",
                self.config.max_pages
            )));
        }
        let d_len = n * self.config.page_tokens;
        if d_len > self.config.decoder_budget {
            return Err(Error::Validation(format!(
                "memory of {d_len} positions exceeds the decoder budget {}",
                self.config.decoder_budget
            )));
        }
        Ok(())
    }

    /// D = [K'_0; ...; K'_{P-1}], `[P·M, d_model]`.
    pub fn memory(&self, page_vectors: &[Tensor]) -> Result<Tensor> {
        self.check_page_count(page_vectors.len())?;
        Tensor::concat(page_vectors)
    }

    /// Page logits `[P_max]`: slot j scores `bias_j + gain_j · softplus(w · mean(K'_j))`
    /// for present pages and `bias_j` for absent slots.
    pub fn page_logits(&self, page_vectors: &[Tensor]) -> Result<Tensor> {
        let p = page_vectors.len();
        self.check_page_count(p)?;
        let d = self.config.d_model;
        let pooled: Vec<Tensor> = page_vectors
            .iter()
            .map(|v| v.mean_axis(0)?.reshape(&[1, d]))
            .collect::<Result<_>>()?;
        let scores = Tensor::concat(&pooled)?.matmul(self.store.get(self.head.w))?.reshape(&[p])?.softplus();
        let mut evidence = scores.mul(&self.store.get(self.head.gain).narrow(0, p)?)?;
        if p < self.config.max_pages {
            evidence = Tensor::concat(&[evidence, Tensor::zeros(&[self.config.max_pages - p])])?;
        }
        evidence.add(self.store.get(self.head.bias))
    }

    /// Answer logits `[T, V]` for decoder input ids under teacher forcing.
    pub fn decode(&self, memory: &Tensor, decoder_input: &[usize]) -> Result<Tensor> {
        let table = self.store.get(self.embed.tokens);
        let y = table.embedding(decoder_input)?;
        let h = self.decoder.forward(&self.store, &y, memory, None)?;
        Ok(h.matmul_t(table)?.scale(1.0 / (self.config.d_model as f64).sqrt()))
    }

    pub fn encode_document(&self, pages: &[PageInput]) -> Result<Vec<Tensor>> {
        self.check_page_count(pages.len())?;
        pages.iter().map(|p| Ok(self.encode_page(p)?.vectors)).collect()
    }

    /// Full forward pass. `answer` holds answer token ids without start/end.
    pub fn forward_document(&self, pages: &[PageInput], answer: Option<&[usize]>) -> Result<ModelOutput> {
        let page_vectors = self.encode_document(pages)?;
        self.forward_encoded(page_vectors, answer)
    }

    pub fn forward_encoded(&self, page_vectors: Vec<Tensor>, answer: Option<&[usize]>) -> Result<ModelOutput> {
        let memory = self.memory(&page_vectors)?;
        let answer_logits = match answer {
            Some(a) => Some(self.decode(&memory, &teacher_forcing(a).0)?),
            None => None,
        };
        let page_logits = self.page_logits(&page_vectors)?;
        Ok(ModelOutput {
            page_vectors,
            answer_logits,
            page_logits,
        })
    }

    /// Greedy decoding from already encoded pages.
    pub fn generate_encoded(&self, page_vectors: &[Tensor], max_len: usize) -> Result<Generation> {
        no_grad(|| {
            let memory = self.memory(page_vectors)?;
            let mut input = vec![START];
            let mut tokens = Vec::new();
            let mut logprob = 0.0;
            for _ in 0..max_len.max(1) {
                let logits = self.decode(&memory, &input)?;
                let v = self.config.vocab_size;
                let t = input.len() - 1;
                let row = log_softmax_row(&logits.data()[t * v..(t + 1) * v]);
                let next = predict_page(&row, v);
                logprob += row[next];
                tokens.push(next);
                if next == END {
                    break;
                }
                input.push(next);
            }
            let page_logits = self.page_logits(page_vectors)?.to_vec();
            Ok(Generation {
                text: self.vocab.decode(&tokens),
                confidence: logprob / tokens.len() as f64,
                page: predict_page(&page_logits, page_vectors.len()),
                tokens,
                page_logits,
            })
        })
    }

    pub fn generate(&self, pages: &[PageInput], max_len: usize) -> Result<Generation> {
        let vectors = no_grad(|| self.encode_document(pages))?;
        self.generate_encoded(&vectors, max_len)
    }

    /// Parameter ids of one group.
    pub fn group_params(&self, group: ParamGroup) -> Vec<ParamId> {
        self.store.ids().filter(|&id| self.store.entry(id).group == group).collect()
    }
}
