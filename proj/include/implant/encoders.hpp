// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

// Tokenization and the toy image/text encoder pair sharing one embedding space.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "implant/autodiff.hpp"
#include "implant/image.hpp"
#include "implant/nn.hpp"

namespace implant {

class EncoderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnknownIdentifierError : public EncoderError {
public:
    explicit UnknownIdentifierError(std::string token)
        : EncoderError("unknown identifier token '" + token + "'"), token_(std::move(token)) {}
    const std::string& token() const { return token_; }

private:
    std::string token_;
};

/// True for words of the form "[...]", the placeholder syntax for implanted objects.
bool is_placeholder(std::string_view word);

/// Word-level vocabulary. Identifier placeholders own a contiguous group of
/// reserved tokens: the placeholder itself followed by "<placeholder>#k"
/// continuation tokens, one per learnable row.
class Vocabulary {
public:
    static constexpr const char* kBos = "<bos>";
    static constexpr const char* kEos = "<eos>";
    static constexpr const char* kUnk = "<unk>";

    /// Tokens must list the special tokens first and identifier groups last.
    Vocabulary(std::vector<std::string> tokens, int embedding_dim);

    /// Special tokens plus the toy caption words.
    static Vocabulary toy_default(int embedding_dim);

    int size() const { return static_cast<int>(tokens_.size()); }
    /// Tokens with rows in the frozen embedding table (everything but identifiers).
    int base_size() const { return base_size_; }
    int embedding_dim() const { return embedding_dim_; }

    std::optional<int> find(std::string_view token) const;
    int index_of(std::string_view token) const;
    const std::string& token(int index) const;

    /// Reserves n_tokens rows for a new placeholder. Returns the reserved indices.
    std::vector<int> reserve_identifier(const std::string& placeholder, int n_tokens);
    bool has_identifier(std::string_view placeholder) const;
    const std::vector<int>& identifier_ids(std::string_view placeholder) const;
    std::vector<std::string> identifiers() const;
    bool is_identifier_index(int index) const { return index >= base_size_ && index < size(); }
    const std::set<std::string>& identifier_tokens() const { return identifier_tokens_; }

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path, int embedding_dim);

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    std::map<std::string, std::vector<int>, std::less<>> groups_;
    std::set<std::string> identifier_tokens_;
    int base_size_ = 0;
    int embedding_dim_ = 0;
};

/// Whitespace-split, lowercased words wrapped in <bos>/<eos>. Placeholders
/// expand to their reserved token group; unknown placeholders throw
/// UnknownIdentifierError, unknown words map to <unk>.
std::vector<int> tokenize(std::string_view prompt, const Vocabulary& vocab);
/// Inverse of tokenize for in-vocabulary prompts (specials and continuation tokens dropped).
std::string detokenize(const std::vector<int>& indices, const Vocabulary& vocab);

/// Learnable rows bound to one identifier (the optimized prompt embedding).
struct PromptEmbedding {
    std::string identifier;
    Parameter rows;  // [n_tokens, dim]

    int n_tokens() const { return rows.value.dim(0); }
    int dim() const { return rows.value.dim(1); }
};

/// Embedding lookup over the frozen base table plus bound identifier rows.
class EmbeddingTable {
public:
    explicit EmbeddingTable(const Parameter& base_rows);

    void bind(const std::vector<int>& indices, const Parameter& rows);
    void bind(const Vocabulary& vocab, const PromptEmbedding& embedding);

    /// [n, dim]. Throws std::out_of_range for indices without a row.
    ad::Var embed(const std::vector<int>& indices) const;
    int dim() const { return base_->value.dim(1); }
    bool covers(int index) const;

private:
    const Parameter* base_;
    std::map<int, std::pair<const Parameter*, int>> bound_;
};

struct TextEmbedding {
    Tensor pooled;    // [dim]
    Tensor sequence;  // [n_tokens, dim]
};

struct TextEncoding {
    ad::Var sequence;
    ad::Var pooled;
};

struct ImageEmbedding {
    Tensor vector;  // [dim]
};

struct TextEncoderConfig {
    int dim = 32;
    int max_len = 32;
    int layers = 1;
    int heads = 2;
    int mlp_mult = 2;
    /// Branch weights scaled down and output projection set to the identity,
    /// so the encoder starts close to embedding + position.
    bool identity_init = false;
};

class TextEncoder {
public:
    TextEncoder(const TextEncoderConfig& cfg, int base_vocab_size, Rng& rng);

    const TextEncoderConfig& config() const { return cfg_; }
    int dim() const { return cfg_.dim; }
    Parameter& token_embedding() { return token_embedding_; }
    const Parameter& token_embedding() const { return token_embedding_; }

    /// indices -> sequence [n, dim] and its mean-pooled vector.
    TextEncoding encode(const std::vector<int>& indices, const EmbeddingTable& table) const;
    /// Encoding with the frozen base table only.
    TextEncoding encode(const std::vector<int>& indices) const;
    /// Runs the attention stack on already embedded rows [n, dim].
    ad::Var forward_embedded(const ad::Var& embedded) const;

    void visit(const nn::ParamVisitor& f);
    void visit(const nn::ConstParamVisitor& f) const;
    void for_each_attention_projection(const std::function<void(nn::Linear&)>& f);
    void for_each_attention_projection(const std::function<void(const nn::Linear&)>& f) const;

private:
    struct Layer {
        nn::LayerNorm ln1, ln2;
        nn::Linear q, k, v, o, fc1, fc2;
    };

    TextEncoderConfig cfg_;
    Parameter token_embedding_;
    Parameter position_embedding_;
    std::vector<Layer> layers_;
    nn::Linear proj_;
};

struct ImageEncoderConfig {
    int dim = 32;
    int input_size = 64;
    int c1 = 8;
    int c2 = 16;
};

class ImageEncoder {
public:
    ImageEncoder(const ImageEncoderConfig& cfg, Rng& rng);

    int dim() const { return cfg_.dim; }
    int input_size() const { return cfg_.input_size; }
    /// [3, S, S] -> [dim]
    ad::Var forward(const ad::Var& chw) const;
    /// Validates, resizes to the fixed input size and encodes.
    ad::Var forward(const Image& image) const;

    void visit(const nn::ParamVisitor& f);
    void visit(const nn::ConstParamVisitor& f) const;

private:
    ImageEncoderConfig cfg_;
    nn::Conv2d conv1_, conv2_;
    nn::Linear proj_;
};

TextEmbedding encode_text(const std::vector<int>& indices, const EmbeddingTable& table, const TextEncoder& encoder);
ImageEmbedding encode_image(const Image& image, const ImageEncoder& encoder);

/// Throws EncoderError unless dim(image embedding) == dim(pooled text embedding).
void check_shared_space(const TextEncoder& text, const ImageEncoder& image);

}  // namespace implant
