#include <cctype>
#include <cmath>
#include <set>

#include "zutis/curation.hpp"
#include "zutis/error.hpp"

namespace zutis {
namespace {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '-') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

const std::set<std::string>& template_vocabulary() {
  static const std::set<std::string> vocab = [] {
    std::set<std::string> v;
    for (const auto& t : default_prompt_templates()) {
      for (auto& tok : tokenize(t)) v.insert(std::move(tok));
    }
    return v;
  }();
  return vocab;
}

}  // namespace

const std::vector<std::string>& default_prompt_templates() {
  static const std::vector<std::string> templates = {
      "a bad photo of a {}.",
      "a photo of many {}.",
      "a sculpture of a {}.",
      "a photo of the hard to see {}.",
      "a low resolution photo of the {}.",
      "a rendering of a {}.",
      "graffiti of a {}.",
      "a bad photo of the {}.",
      "a cropped photo of the {}.",
      "a tattoo of a {}.",
      "the embroidered {}.",
      "a photo of a hard to see {}.",
      "a bright photo of a {}.",
      "a photo of a clean {}.",
      "a photo of a dirty {}.",
      "a dark photo of the {}.",
      "a drawing of a {}.",
      "a photo of my {}.",
      "the plastic {}.",
      "a photo of the cool {}.",
      "a close-up photo of a {}.",
      "a black and white photo of the {}.",
      "a painting of the {}.",
      "a painting of a {}.",
      "a pixelated photo of the {}.",
      "a sculpture of the {}.",
      "a bright photo of the {}.",
      "a cropped photo of a {}.",
      "a plastic {}.",
      "a photo of the dirty {}.",
      "a jpeg corrupted photo of a {}.",
      "a blurry photo of the {}.",
      "a photo of the {}.",
      "a good photo of the {}.",
      "a rendering of the {}.",
      "a {} in a video game.",
      "a photo of one {}.",
      "a doodle of a {}.",
      "a close-up photo of the {}.",
      "a photo of a {}.",
      "the origami {}.",
      "the {} in a video game.",
      "a sketch of a {}.",
      "a doodle of the {}.",
      "a origami {}.",
      "a low resolution photo of a {}.",
      "the toy {}.",
      "a rendition of the {}.",
      "a photo of the clean {}.",
      "a photo of a large {}.",
      "a rendition of a {}.",
      "a photo of a nice {}.",
      "a photo of a weird {}.",
      "a blurry photo of a {}.",
      "a cartoon {}.",
      "art of a {}.",
      "a sketch of the {}.",
      "a embroidered {}.",
      "a pixelated photo of a {}.",
      "itap of the {}.",
      "a jpeg corrupted photo of the {}.",
      "a good photo of a {}.",
      "a plushie {}.",
      "a photo of the nice {}.",
      "a photo of the small {}.",
      "a photo of the weird {}.",
      "the cartoon {}.",
      "art of the {}.",
      "a drawing of the {}.",
      "a photo of the large {}.",
      "a black and white photo of a {}.",
      "the plushie {}.",
      "a dark photo of a {}.",
      "itap of a {}.",
      "graffiti of the {}.",
      "a toy {}.",
      "itap of my {}.",
      "a photo of a cool {}.",
      "a photo of a small {}.",
      "a tattoo of the {}.",
      "there is a {} in the scene.",
      "there is the {} in the scene.",
      "this is a {} in the scene.",
      "this is the {} in the scene.",
      "this is one {} in the scene.",
  };
  return templates;
}

std::string fill_template(std::string_view tmpl, std::string_view category) {
  std::string out(tmpl);
  const auto pos = out.find("{}");
  if (pos == std::string::npos) return out + " " + std::string(category);
  out.replace(pos, 2, category);
  return out;
}

HashTextEncoder::HashTextEncoder(int dim, float template_word_weight) : dim_(dim), template_weight_(template_word_weight) {
  if (dim < 1) throw ArgumentError("text encoder dimension must be positive");
}

Eigen::VectorXf HashTextEncoder::token_vector(std::string_view token) const {
  Rng rng(fnv1a(token));
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXf v(dim_);
  for (int i = 0; i < dim_; ++i) v(i) = static_cast<float>(dist(rng));
  return v.normalized();
}

Eigen::VectorXf HashTextEncoder::encode(std::string_view text) const {
  const auto& vocab = template_vocabulary();
  Eigen::VectorXf acc = Eigen::VectorXf::Zero(dim_);
  for (const auto& tok : tokenize(text)) {
    const float w = vocab.count(tok) ? template_weight_ : 1.0f;
    acc += w * token_vector(tok);
  }
  const float n = acc.norm();
  if (n < 1e-12f) throw DegeneratePromptError("text encodes to a zero vector: '" + std::string(text) + "'");
  return acc / n;
}

CategoryPrompt encode_category_prompts(const std::string& category_name, const std::vector<std::string>& templates,
                                       const TextEncoder& encoder) {
  if (templates.empty()) throw ArgumentError("encode_category_prompts: no templates");
  // Double accumulation keeps template order out of the float result.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(encoder.dim());
  for (const auto& t : templates) mean += encoder.encode(fill_template(t, category_name)).cast<double>();
  mean /= static_cast<double>(templates.size());
  if (mean.norm() < 1e-8) {
    throw DegeneratePromptError("prompt embeddings for '" + category_name + "' average to zero");
  }
  return {category_name, templates, mean.normalized().cast<float>()};
}

TextBank make_text_bank(const std::vector<std::string>& names, const std::vector<std::string>& templates,
                        const TextEncoder& encoder) {
  Matrix rows(static_cast<Eigen::Index>(names.size()), encoder.dim());
  for (std::size_t i = 0; i < names.size(); ++i) {
    rows.row(static_cast<Eigen::Index>(i)) = encode_category_prompts(names[i], templates, encoder).embedding.transpose();
  }
  return TextBank(std::move(rows), names);
}

}  // namespace zutis
