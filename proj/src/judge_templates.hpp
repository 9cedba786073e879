#pragma once

// Judge prompt templates. Placeholders in braces are substituted verbatim;
// every other character, including trailing spaces, is part of the template.

namespace ideodepth::adjudicator::templates {

inline constexpr const char* kPredictiveValidity = R"TPL(**ROLE:** You are an expert political science analyst. Your task is to 
evaluate the descriptive power of a set of semantic features extracted from 
a political statement.

**CONTEXT:** I have two language models, Llama and Gemma, that have 
analyzed a political statement. They have each extracted a set of features 
that they believe represents the core concepts of the statement. I want to 
know which model's features are more informative.

**TASK:**
1.  Read the original "Test Statement" carefully.
2.  Analyze the provided "Extracted Features."
3.  Based ONLY on the "Extracted Features," classify the "Test Statement" 
into one of the following categories: {category_list}
4.  Rate your confidence in this classification on a scale of 1 to 5, where 
1 is a pure guess and 5 is highly confident.
5.  Provide a brief, one-sentence justification for your classification, 
explaining which features were most influential.

**STRICT INSTRUCTION:** Your classification MUST be based *solely* on the 
provided list of features, not on your prior knowledge of the statement 
itself.

**INPUT:**
*   **Test Statement:** "{statement}"
*   **Extracted Features:**{feature_list}

**OUTPUT FORMAT (JSON):**
```json
{
  "classification": "CHOSEN_CATEGORY",
  "confidence_score": <1-5 integer>,
  "justification": "Your one-sentence explanation."
}
```)TPL";

inline constexpr const char* kCoherence = R"TPL(**ROLE:** You are an expert researcher in computational linguistics and 
political science. Your task is to evaluate the thematic coherence of a set 
of semantic features.

**CONTEXT:** A language model has processed a statement and activated a set 
of features. I need to determine if these features represent a clear, 
unified, and interpretable theme or if they are a disjointed collection of 
unrelated concepts.

**TASK:**
1.  Carefully review the "List of Activated Features."
2.  On a scale of 1 to 5, rate the **thematic coherence** of the feature 
set.
    - **1:** No clear theme. The features seem random and unrelated.
    - **3:** A weak theme is present, but many features are unrelated to 
    the core concept.
    - **5:** Highly coherent. All features clearly relate to a single, well-
    defined political or linguistic concept.
3.  In one phrase or sentence, describe the primary theme that unifies 
these features (e.g., "Critique of social welfare spending" or "Analysis of 
conditional legal language").
4.  Provide a brief justification for your score, noting any outlier 
features that do not fit the main theme.

**INPUT:**
*   **List of Activated Features (from Llama/Gemma):** {feature_str}

**OUTPUT FORMAT (JSON):**
```json
{
  "coherence_score": <1-5 integer>,
  "primary_theme": "Your summary phrase.",
  "justification": "Your brief explanation."
}
```)TPL";

}  // namespace ideodepth::adjudicator::templates
