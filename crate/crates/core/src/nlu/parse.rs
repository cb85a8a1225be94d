use serde::{Deserialize, Serialize};

use super::ranker::{predict_intent, RankerParams};
use crate::corpus::DomainSpec;
use crate::linalg::{cosine_similarity, softmax};
use crate::text::{
    detect_language, extract_entities, featurize, normalize_text, tokenize, EntityMatch, Language, Lexicon, Token,
    DEFAULT_LANGUAGE_THRESHOLD,
};

/// Pseudo-intent reported when the language gate rejects the input or the
/// input has no tokens.
pub const NLU_FALLBACK: &str = "nlu_fallback";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentScore {
    pub intent: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub token: String,
    pub salience: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub text: String,
    pub language: Language,
    /// Descending by confidence, summing to one.
    pub ranking: Vec<IntentScore>,
    pub entities: Vec<EntityMatch>,
    pub keywords: Vec<Keyword>,
}

impl ParseResult {
    pub fn top_intent(&self) -> Option<&IntentScore> {
        self.ranking.first()
    }

    /// A parse whose ranking is a single intent with confidence 1, as used
    /// for story turns and reviewer corrections.
    pub fn with_intent(text: impl Into<String>, intent: impl Into<String>, entities: Vec<EntityMatch>) -> Self {
        ParseResult {
            text: text.into(),
            language: Language::English,
            ranking: vec![IntentScore {
                intent: intent.into(),
                confidence: 1.0,
            }],
            entities,
            keywords: Vec::new(),
        }
    }

    pub fn is_fallback(&self) -> bool {
        self.top_intent().is_none_or(|s| s.intent == NLU_FALLBACK)
    }
}

/// Attention of each token's embedding against the winning label
/// embedding, normalised with the ranker's softmax temperature.
pub fn extract_salient_keywords(params: &RankerParams, tokens: &[Token], top_label: usize) -> Vec<Keyword> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let label = params.label_embedding(top_label);
    let scores: Vec<f64> = tokens
        .iter()
        .map(|t| {
            let x = featurize(std::slice::from_ref(t), params.feature_dim);
            cosine_similarity(&params.embed(&x), label)
        })
        .collect();
    tokens
        .iter()
        .zip(softmax(&scores, params.hyper.temperature))
        .map(|(t, s)| Keyword {
            token: t.normalized.clone(),
            salience: s,
        })
        .collect()
}

/// Language gate, tokenization, featurization, intent ranking, gazetteer
/// entities and keyword salience, in that order.
pub fn parse(text: &str, lexicons: &[Lexicon], ranker: &RankerParams, domain: &DomainSpec) -> ParseResult {
    NluPipeline::new(lexicons.to_vec(), ranker.clone()).parse(text, domain)
}

/// Loaded NLU components. Immutable and shareable across conversations.
#[derive(Debug, Clone, PartialEq)]
pub struct NluPipeline {
    pub lexicons: Vec<Lexicon>,
    pub ranker: RankerParams,
    pub language_threshold: f64,
}

impl NluPipeline {
    pub fn new(lexicons: Vec<Lexicon>, ranker: RankerParams) -> Self {
        NluPipeline {
            lexicons,
            ranker,
            language_threshold: DEFAULT_LANGUAGE_THRESHOLD,
        }
    }

    pub fn parse(&self, text: &str, domain: &DomainSpec) -> ParseResult {
        let text = normalize_text(text);
        let (language, _) = detect_language(&text, self.language_threshold);
        let tokens = tokenize(&text);
        let fallback = |entities, keywords| ParseResult {
            text: text.clone(),
            language,
            ranking: vec![IntentScore {
                intent: NLU_FALLBACK.to_string(),
                confidence: 1.0,
            }],
            entities,
            keywords,
        };
        if tokens.is_empty() {
            return fallback(Vec::new(), Vec::new());
        }

        let x = featurize(&tokens, self.ranker.feature_dim);
        let ranking = predict_intent(&self.ranker, &x);
        let entities: Vec<EntityMatch> = extract_entities(&tokens, &self.lexicons)
            .into_iter()
            .filter(|e| domain.entity_types.is_empty() || domain.entity_types.contains(&e.entity_type))
            .collect();
        let top = ranking
            .first()
            .and_then(|s| self.ranker.label_index(&s.intent))
            .unwrap_or(0);
        let keywords = extract_salient_keywords(&self.ranker, &tokens, top);

        if language == Language::Unknown {
            return fallback(entities, keywords);
        }
        ParseResult {
            text,
            language,
            ranking,
            entities,
            keywords,
        }
    }
}
