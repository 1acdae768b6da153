//! Known embedding models and their output widths.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnownModel {
    pub model_id: &'static str,
    pub family: &'static str,
    pub dim: usize,
    /// Position by size within the family, smallest first.
    pub size_rank: u32,
}

const fn m(model_id: &'static str, family: &'static str, dim: usize, size_rank: u32) -> KnownModel {
    KnownModel {
        model_id,
        family,
        dim,
        size_rank,
    }
}

pub const KNOWN_MODELS: &[KnownModel] = &[
    m("microsoft/deberta-v3-xsmall", "deberta", 384, 0),
    m("microsoft/deberta-v3-small", "deberta", 768, 1),
    m("microsoft/deberta-v3-base", "deberta", 768, 2),
    m("microsoft/deberta-v3-large", "deberta", 1024, 3),
    m("sentence-transformers/all-MiniLM-L6-v2", "sentence-transformers", 384, 0),
    m("sentence-transformers/all-MiniLM-L12-v2", "sentence-transformers", 768, 1),
    m("sentence-transformers/all-mpnet-base-v2", "sentence-transformers", 768, 2),
    m("text-similarity-ada-001", "gpt-3", 1024, 0),
    m("text-similarity-babbage-001", "gpt-3", 2048, 1),
    m("text-similarity-curie-001", "gpt-3", 4096, 2),
    m("text-embedding-ada-002", "gpt-3", 1536, 3),
    m("cohere/small", "cohere", 1024, 0),
    m("cohere/medium", "cohere", 2048, 1),
    m("cohere/large", "cohere", 4096, 2),
    // current hosted models, useful for live runs
    m("text-embedding-3-small", "openai-v3", 1536, 0),
    m("text-embedding-3-large", "openai-v3", 3072, 1),
];

pub fn lookup(model_id: &str) -> Option<&'static KnownModel> {
    KNOWN_MODELS.iter().find(|k| k.model_id == model_id)
}
