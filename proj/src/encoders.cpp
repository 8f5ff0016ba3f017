// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace implant {

namespace {

const std::vector<std::string>& toy_words() {
    static const std::vector<std::string> words = {
        "a", "an", "photo", "of", "and", "on", "the", "in", "with", "background", "picture", "image",
        // colors
        "red", "green", "blue", "yellow", "purple", "orange", "white", "black", "gray", "cyan",
        // toy shape classes
        "circle", "square", "triangle", "ring",
        // everyday classes for prompts
        "dog", "cat", "cup", "hat", "flower", "duck", "strawberry", "toy", "bucket", "person", "face",
        // context words
        "sitting", "wearing", "beach", "table", "garden", "snow", "style", "painting", "smiling", "next", "to",
    };
    return words;
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string continuation_name(const std::string& placeholder, int k) { return placeholder + "#" + std::to_string(k); }

// "[v*]#3" -> ("[v*]", 3)
std::optional<std::pair<std::string, int>> split_continuation(const std::string& tok) {
    const auto hash = tok.rfind('#');
    if (hash == std::string::npos || hash == 0) return std::nullopt;
    const std::string head = tok.substr(0, hash);
    if (!is_placeholder(head)) return std::nullopt;
    const std::string num = tok.substr(hash + 1);
    if (num.empty() || !std::all_of(num.begin(), num.end(), [](unsigned char c) { return std::isdigit(c); }))
        return std::nullopt;
    return std::make_pair(head, std::stoi(num));
}

}  // namespace

bool is_placeholder(std::string_view word) {
    return word.size() >= 3 && word.front() == '[' && word.back() == ']';
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, int embedding_dim) : embedding_dim_(embedding_dim) {
    if (embedding_dim <= 0) throw EncoderError("embedding_dim must be positive");
    bool in_identifiers = false;
    for (auto& tok : tokens) {
        if (tok.empty()) throw EncoderError("empty token in vocabulary");
        if (index_.count(tok)) throw EncoderError("duplicate token '" + tok + "' in vocabulary");
        const int idx = static_cast<int>(tokens_.size());
        const bool head = is_placeholder(tok);
        const auto cont = split_continuation(tok);
        if (head || cont) {
            in_identifiers = true;
            if (head) {
                groups_[tok] = {idx};
            } else {
                auto it = groups_.find(cont->first);
                if (it == groups_.end() || static_cast<int>(it->second.size()) != cont->second)
                    throw EncoderError("continuation token '" + tok + "' is out of order");
                it->second.push_back(idx);
            }
            identifier_tokens_.insert(tok);
        } else {
            if (in_identifiers) throw EncoderError("ordinary token '" + tok + "' listed after identifier tokens");
            base_size_ = idx + 1;
        }
        index_[tok] = idx;
        tokens_.push_back(std::move(tok));
    }
    for (const char* special : {kBos, kEos, kUnk})
        if (!index_.count(special)) throw EncoderError(std::string("vocabulary lacks special token ") + special);
}

Vocabulary Vocabulary::toy_default(int embedding_dim) {
    std::vector<std::string> tokens = {kBos, kEos, kUnk};
    for (const auto& w : toy_words()) tokens.push_back(w);
    return Vocabulary(std::move(tokens), embedding_dim);
}

std::optional<int> Vocabulary::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

int Vocabulary::index_of(std::string_view token) const {
    auto idx = find(token);
    if (!idx) throw EncoderError("token '" + std::string(token) + "' not in vocabulary");
    return *idx;
}

const std::string& Vocabulary::token(int index) const {
    if (index < 0 || index >= size()) throw std::out_of_range("token index " + std::to_string(index) + " out of range");
    return tokens_[static_cast<std::size_t>(index)];
}

std::vector<int> Vocabulary::reserve_identifier(const std::string& placeholder, int n_tokens) {
    if (!is_placeholder(placeholder)) throw EncoderError("identifier '" + placeholder + "' must look like [name]");
    if (placeholder.find('#') != std::string::npos || placeholder.find(' ') != std::string::npos)
        throw EncoderError("identifier '" + placeholder + "' may not contain '#' or spaces");
    if (n_tokens < 1) throw EncoderError("identifier needs at least one token row");
    if (groups_.count(placeholder)) throw EncoderError("identifier '" + placeholder + "' already reserved");
    std::vector<int> ids;
    for (int k = 0; k < n_tokens; ++k) {
        const std::string name = k == 0 ? placeholder : continuation_name(placeholder, k);
        if (index_.count(name)) throw EncoderError("token '" + name + "' already exists");
        const int idx = size();
        tokens_.push_back(name);
        index_[name] = idx;
        identifier_tokens_.insert(name);
        ids.push_back(idx);
    }
    groups_[placeholder] = ids;
    return ids;
}

bool Vocabulary::has_identifier(std::string_view placeholder) const { return groups_.find(placeholder) != groups_.end(); }

const std::vector<int>& Vocabulary::identifier_ids(std::string_view placeholder) const {
    auto it = groups_.find(placeholder);
    if (it == groups_.end()) throw UnknownIdentifierError(std::string(placeholder));
    return it->second;
}

std::vector<std::string> Vocabulary::identifiers() const {
    std::vector<std::pair<int, std::string>> order;
    for (const auto& [name, ids] : groups_) order.emplace_back(ids.front(), name);
    std::sort(order.begin(), order.end());
    std::vector<std::string> out;
    for (auto& [_, name] : order) out.push_back(name);
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw EncoderError("cannot write vocabulary file " + path.string());
    for (const auto& t : tokens_) out << t << "\n";
    if (!out) throw EncoderError("failed writing vocabulary file " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path, int embedding_dim) {
    std::ifstream in(path);
    if (!in) throw EncoderError("cannot open vocabulary file " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens), embedding_dim);
}

std::vector<int> tokenize(std::string_view prompt, const Vocabulary& vocab) {
    std::vector<int> ids{vocab.index_of(Vocabulary::kBos)};
    std::istringstream in{std::string(prompt)};
    std::string word;
    const int unk = vocab.index_of(Vocabulary::kUnk);
    while (in >> word) {
        if (is_placeholder(word)) {
            // Placeholders are matched case-sensitively; they are user-chosen names.
            if (!vocab.has_identifier(word)) throw UnknownIdentifierError(word);
            const auto& group = vocab.identifier_ids(word);
            ids.insert(ids.end(), group.begin(), group.end());
        } else if (!word.empty() && word.front() == '[') {
            throw UnknownIdentifierError(word);
        } else {
            auto idx = vocab.find(lowercase(word));
            ids.push_back(idx && !vocab.is_identifier_index(*idx) ? *idx : unk);
        }
    }
    ids.push_back(vocab.index_of(Vocabulary::kEos));
    return ids;
}

std::string detokenize(const std::vector<int>& indices, const Vocabulary& vocab) {
    std::string out;
    const int bos = vocab.index_of(Vocabulary::kBos);
    const int eos = vocab.index_of(Vocabulary::kEos);
    for (int idx : indices) {
        if (idx == bos || idx == eos) continue;
        const std::string& tok = vocab.token(idx);
        if (vocab.is_identifier_index(idx) && !is_placeholder(tok)) continue;  // continuation row
        if (!out.empty()) out += ' ';
        out += tok;
    }
    return out;
}

EmbeddingTable::EmbeddingTable(const Parameter& base_rows) : base_(&base_rows) {
    if (base_rows.value.rank() != 2) throw EncoderError("embedding table must be a matrix");
}

void EmbeddingTable::bind(const std::vector<int>& indices, const Parameter& rows) {
    if (rows.value.rank() != 2 || rows.value.dim(1) != dim() || rows.value.dim(0) != static_cast<int>(indices.size()))
        throw EncoderError("bound rows " + shape_str(rows.value.shape()) + " do not match " +
                           std::to_string(indices.size()) + " indices of dim " + std::to_string(dim()));
    for (std::size_t r = 0; r < indices.size(); ++r) bound_[indices[r]] = {&rows, static_cast<int>(r)};
}

void EmbeddingTable::bind(const Vocabulary& vocab, const PromptEmbedding& embedding) {
    bind(vocab.identifier_ids(embedding.identifier), embedding.rows);
}

bool EmbeddingTable::covers(int index) const {
    return (index >= 0 && index < base_->value.dim(0)) || bound_.count(index) != 0;
}

ad::Var EmbeddingTable::embed(const std::vector<int>& indices) const {
    // One leaf per distinct source so gradients accumulate once per parameter.
    std::map<const Parameter*, ad::Var> leaves;
    auto leaf_for = [&](const Parameter* p) -> const ad::Var& {
        auto it = leaves.find(p);
        if (it == leaves.end()) it = leaves.emplace(p, ad::param(*p)).first;
        return it->second;
    };
    std::vector<ad::Var> parts;
    std::size_t i = 0;
    while (i < indices.size()) {
        const int idx = indices[i];
        const Parameter* src;
        std::vector<int> rows;
        auto it = bound_.find(idx);
        if (it != bound_.end()) {
            src = it->second.first;
        } else if (idx >= 0 && idx < base_->value.dim(0)) {
            src = base_;
        } else {
            throw std::out_of_range("token index " + std::to_string(idx) + " has no embedding row");
        }
        // Gather a run of consecutive indices served by the same source.
        while (i < indices.size()) {
            const int j = indices[i];
            auto jt = bound_.find(j);
            const Parameter* s = jt != bound_.end() ? jt->second.first
                                 : (j >= 0 && j < base_->value.dim(0)) ? base_ : nullptr;
            if (s != src) break;
            rows.push_back(jt != bound_.end() ? jt->second.second : j);
            ++i;
        }
        parts.push_back(ad::select_rows(leaf_for(src), rows));
    }
    if (parts.empty()) throw EncoderError("cannot embed an empty index list");
    return parts.size() == 1 ? parts.front() : ad::concat_rows(parts);
}

TextEncoder::TextEncoder(const TextEncoderConfig& cfg, int base_vocab_size, Rng& rng) : cfg_(cfg) {
    if (cfg.dim % cfg.heads != 0) throw EncoderError("text encoder dim must be divisible by heads");
    token_embedding_ = Parameter("text.token_embedding", rng.normal_tensor({base_vocab_size, cfg.dim}, 1.0));
    position_embedding_ = Parameter("text.position_embedding", rng.normal_tensor({cfg.max_len, cfg.dim}, 0.1));
    const double branch = cfg.identity_init ? 0.01 : 1.0;
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "text.layer" + std::to_string(l);
        Layer layer{nn::LayerNorm(p + ".ln1", cfg.dim),
                    nn::LayerNorm(p + ".ln2", cfg.dim),
                    nn::Linear(p + ".attn.to_q", cfg.dim, cfg.dim, false, rng),
                    nn::Linear(p + ".attn.to_k", cfg.dim, cfg.dim, false, rng),
                    nn::Linear(p + ".attn.to_v", cfg.dim, cfg.dim, false, rng),
                    nn::Linear(p + ".attn.to_out", cfg.dim, cfg.dim, true, rng, branch),
                    nn::Linear(p + ".mlp.fc1", cfg.dim, cfg.dim * cfg.mlp_mult, true, rng),
                    nn::Linear(p + ".mlp.fc2", cfg.dim * cfg.mlp_mult, cfg.dim, true, rng, branch)};
        layers_.push_back(std::move(layer));
    }
    proj_ = nn::Linear("text.proj", cfg.dim, cfg.dim, false, rng);
    if (cfg.identity_init) {
        Tensor& w = proj_.weight().value;
        w.fill(0.0);
        for (int i = 0; i < cfg.dim; ++i) w.at(i, i) = 1.0;
    }
}

ad::Var TextEncoder::forward_embedded(const ad::Var& embedded) const {
    const int n = embedded.dim(0);
    if (n == 0) throw EncoderError("cannot encode an empty token sequence");
    if (n > cfg_.max_len)
        throw EncoderError("prompt has " + std::to_string(n) + " tokens, above the limit of " + std::to_string(cfg_.max_len));
    std::vector<int> pos(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = i;
    ad::Var x = ad::add(embedded, ad::select_rows(ad::param(position_embedding_), pos));

    const int hd = cfg_.dim / cfg_.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    for (const auto& layer : layers_) {
        ad::Var h = layer.ln1.forward(x);
        ad::Var q = layer.q.forward(h), k = layer.k.forward(h), v = layer.v.forward(h);
        std::vector<ad::Var> heads;
        for (int hh = 0; hh < cfg_.heads; ++hh) {
            ad::Var qs = ad::slice_cols(q, hh * hd, hd), ks = ad::slice_cols(k, hh * hd, hd), vs = ad::slice_cols(v, hh * hd, hd);
            ad::Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(qs, ks), inv_sqrt));
            heads.push_back(ad::matmul(att, vs));
        }
        x = ad::add(x, layer.o.forward(heads.size() == 1 ? heads.front() : ad::concat_cols(heads)));
        ad::Var m = layer.fc2.forward(ad::silu(layer.fc1.forward(layer.ln2.forward(x))));
        x = ad::add(x, m);
    }
    return proj_.forward(x);
}

TextEncoding TextEncoder::encode(const std::vector<int>& indices, const EmbeddingTable& table) const {
    if (table.dim() != cfg_.dim) throw EncoderError("embedding table dim does not match text encoder");
    ad::Var seq = forward_embedded(table.embed(indices));
    return {seq, ad::mean_rows(seq)};
}

TextEncoding TextEncoder::encode(const std::vector<int>& indices) const {
    return encode(indices, EmbeddingTable(token_embedding_));
}

void TextEncoder::visit(const nn::ParamVisitor& f) {
    f(token_embedding_);
    f(position_embedding_);
    for (auto& l : layers_) {
        l.ln1.visit(f);
        l.ln2.visit(f);
        for (nn::Linear* lin : {&l.q, &l.k, &l.v, &l.o, &l.fc1, &l.fc2}) lin->visit(f);
    }
    proj_.visit(f);
}

void TextEncoder::visit(const nn::ConstParamVisitor& f) const {
    f(token_embedding_);
    f(position_embedding_);
    for (const auto& l : layers_) {
        l.ln1.visit(f);
        l.ln2.visit(f);
        for (const nn::Linear* lin : {&l.q, &l.k, &l.v, &l.o, &l.fc1, &l.fc2}) lin->visit(f);
    }
    proj_.visit(f);
}

void TextEncoder::for_each_attention_projection(const std::function<void(nn::Linear&)>& f) {
    for (auto& l : layers_)
        for (nn::Linear* lin : {&l.q, &l.k, &l.v, &l.o}) f(*lin);
}

void TextEncoder::for_each_attention_projection(const std::function<void(const nn::Linear&)>& f) const {
    for (const auto& l : layers_)
        for (const nn::Linear* lin : {&l.q, &l.k, &l.v, &l.o}) f(*lin);
}

ImageEncoder::ImageEncoder(const ImageEncoderConfig& cfg, Rng& rng)
    : cfg_(cfg),
      conv1_("image.conv1", 3, cfg.c1, 4, 4, 0, rng, std::sqrt(2.0)),
      conv2_("image.conv2", cfg.c1, cfg.c2, 4, 4, 0, rng, std::sqrt(2.0)) {
    if (cfg.input_size % 16 != 0) throw EncoderError("image encoder input size must be a multiple of 16");
    const int s = cfg.input_size / 16;
    proj_ = nn::Linear("image.proj", cfg.c2 * s * s, cfg.dim, true, rng);
}

ad::Var ImageEncoder::forward(const ad::Var& chw) const {
    if (chw.value().rank() != 3 || chw.dim(0) != 3 || chw.dim(1) != cfg_.input_size || chw.dim(2) != cfg_.input_size)
        throw EncoderError("image encoder expects [3," + std::to_string(cfg_.input_size) + "," +
                           std::to_string(cfg_.input_size) + "], got " + shape_str(chw.shape()));
    // Inputs are centred around zero before the first convolution.
    ad::Var x = ad::add_scalar(ad::scale(chw, 2.0), -1.0);
    x = ad::silu(conv1_.forward(x));
    x = ad::silu(conv2_.forward(x));
    ad::Var flat = ad::reshape(x, {1, static_cast<int>(x.size())});
    ad::Var out = proj_.forward(flat);
    return ad::reshape(out, {cfg_.dim});
}

ad::Var ImageEncoder::forward(const Image& image) const {
    image.validate();
    if (image.channels != 3) throw EncoderError("image encoder expects RGB input");
    return forward(ad::constant(image_to_chw(resize(image, cfg_.input_size, cfg_.input_size))));
}

void ImageEncoder::visit(const nn::ParamVisitor& f) {
    conv1_.visit(f);
    conv2_.visit(f);
    proj_.visit(f);
}

void ImageEncoder::visit(const nn::ConstParamVisitor& f) const {
    conv1_.visit(f);
    conv2_.visit(f);
    proj_.visit(f);
}

TextEmbedding encode_text(const std::vector<int>& indices, const EmbeddingTable& table, const TextEncoder& encoder) {
    for (int idx : indices)
        if (!table.covers(idx)) throw std::out_of_range("token index " + std::to_string(idx) + " out of range");
    TextEncoding enc = encoder.encode(indices, table);
    return {enc.pooled.value(), enc.sequence.value()};
}

ImageEmbedding encode_image(const Image& image, const ImageEncoder& encoder) {
    return {encoder.forward(image).value()};
}

void check_shared_space(const TextEncoder& text, const ImageEncoder& image) {
    if (text.dim() != image.dim())
        throw EncoderError("image embedding dim " + std::to_string(image.dim()) + " differs from text embedding dim " +
                           std::to_string(text.dim()));
}

}  // namespace implant
