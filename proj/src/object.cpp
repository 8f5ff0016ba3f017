// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/object.hpp"

#include <sstream>

#include "implant/encoders.hpp"

namespace implant {

ObjectSpec ObjectSpec::make(Image image, Mask mask, std::string class_name, std::string identifier) {
    ObjectSpec o;
    o.image = std::move(image);
    o.mask = std::move(mask);
    o.class_name = std::move(class_name);
    o.identifier = std::move(identifier);
    o.object_prompt = object_prompt_for(o.identifier, o.class_name);
    return o;
}

void ObjectSpec::validate() const {
    if (!is_placeholder(identifier)) throw ObjectError("identifier '" + identifier + "' must look like [name]");
    if (class_name.empty() || class_name.find(' ') != std::string::npos)
        throw ObjectError("class name for " + identifier + " must be a single word");
    try {
        image.validate();
    } catch (const ImageError& e) {
        throw ObjectError("image for " + identifier + ": " + e.what());
    }
    if (mask.height != image.height || mask.width != image.width)
        throw ObjectError("mask for " + identifier + " is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                          ", image is " + std::to_string(image.height) + "x" + std::to_string(image.width));
    if (mask.count() == 0) throw ObjectError("mask for " + identifier + " is empty");
    if (count_word(object_prompt, identifier) != 1)
        throw ObjectError("object prompt '" + object_prompt + "' must contain " + identifier + " exactly once");
}

std::string object_prompt_for(const std::string& identifier, const std::string& class_name) {
    return "a photo of " + identifier + " " + class_name;
}

std::string class_prompt_for(const std::string& class_name) { return "a photo of a " + class_name; }

std::string identifier_prompt(const std::string& identifier) { return "a photo of " + identifier; }

std::string global_prompt(const std::vector<std::string>& identifiers) {
    if (identifiers.empty()) throw ObjectError("global prompt needs at least one identifier");
    std::string s = "a photo of " + identifiers.front();
    for (std::size_t i = 1; i < identifiers.size(); ++i) s += " and " + identifiers[i];
    return s;
}

std::string substitute_identifiers(const std::string& prompt, const std::vector<std::pair<std::string, std::string>>& id_to_class) {
    std::istringstream in(prompt);
    std::string word, out;
    while (in >> word) {
        for (const auto& [id, cls] : id_to_class)
            if (word == id) {
                word = cls;
                break;
            }
        if (!out.empty()) out += ' ';
        out += word;
    }
    return out;
}

int count_word(const std::string& prompt, const std::string& word) {
    std::istringstream in(prompt);
    std::string w;
    int n = 0;
    while (in >> w) n += w == word;
    return n;
}

}  // namespace implant
