"""Writes tests/fixtures/metrics_golden.json: a 20-album toy corpus with five
reference stories per album, scored by pycocoevalcap (BLEU, ROUGE-L, CIDEr,
METEOR 1.5). METEOR is run twice: with its default English settings, and with
exact+stem modules, unit weights and parameters alpha 0.9, beta 3, gamma 0.5,
delta 0.5.

usage: gen_metric_golden.py OUT PYCOCOEVALCAP_DIR JAVA_BIN_DIR
"""
import json
import os
import random
import subprocess
import sys

SUBJECTS = ["the family", "my friends", "we", "the kids", "our dog", "the couple", "everyone"]
VERBS = [("walk", "walked", "walking"), ("play", "played", "playing"), ("visit", "visited", "visiting"),
         ("climb", "climbed", "climbing"), ("jump", "jumped", "jumping"), ("look", "looked", "looking"),
         ("paint", "painted", "painting"), ("cook", "cooked", "cooking")]
PLACES = ["the beach", "the park", "the mountains", "the lake", "the city", "the garden", "the museum"]
THINGS = ["flowers", "boats", "birds", "trees", "cakes", "pictures", "houses", "waves"]
ADJ = ["beautiful", "happy", "tall", "quiet", "bright", "cold", "old"]


def sentence(rng, tense):
    subj = rng.choice(SUBJECTS)
    verb = rng.choice(VERBS)
    form = verb[1] if tense == "past" else verb[2]
    aux = [] if tense == "past" else ["were"]
    words = subj.split() + aux + [form, "at"] + rng.choice(PLACES).split()
    if rng.random() < 0.6:
        words += ["with", rng.choice(ADJ), rng.choice(THINGS)]
    return words + ["."]


def story(rng, n):
    out = []
    for _ in range(n):
        out += sentence(rng, "past" if rng.random() < 0.7 else "progressive")
    return out


def variant(rng, words):
    """Perturbs a story: morphological swaps, drops, replacements."""
    forms = {}
    for v in VERBS:
        forms[v[1]] = [v[0] + "s", v[2]]
        forms[v[2]] = [v[1]]
    for t in THINGS:
        forms[t] = [t[:-1]]
    out = []
    for w in words:
        r = rng.random()
        if w in forms and r < 0.5:
            out.append(rng.choice(forms[w]))
        elif r < 0.08:
            continue
        elif r < 0.15:
            out.append(rng.choice(ADJ))
        else:
            out.append(w)
    return out


def main(out_path, pcc_dir, java_dir):
    sys.path.insert(0, os.path.dirname(pcc_dir))
    os.environ["PATH"] = java_dir + os.pathsep + os.environ["PATH"]
    from pycocoevalcap.bleu.bleu import Bleu
    from pycocoevalcap.cider.cider import Cider
    from pycocoevalcap.meteor.meteor import Meteor
    from pycocoevalcap.rouge.rouge import Rouge

    rng = random.Random(20261015)
    instances = []
    for a in range(20):
        n = rng.randint(2, 4)
        refs = [story(rng, n) for _ in range(5)]
        kind = a % 4
        if kind == 0:
            hyp = variant(rng, refs[rng.randrange(5)])
        elif kind == 1:
            hyp = story(rng, n)
        elif kind == 2:
            hyp = sentence(rng, "past")
        else:
            hyp = variant(rng, refs[0]) + sentence(rng, "progressive")
        instances.append({"album_id": f"album{a:02d}", "hypothesis": hyp, "references": refs})

    gts = {i: [" ".join(r) for r in inst["references"]] for i, inst in enumerate(instances)}
    res = {i: [" ".join(inst["hypothesis"])] for i, inst in enumerate(instances)}

    bleu, _ = Bleu(4).compute_score(gts, res, verbose=0)
    rouge, rouge_each = Rouge().compute_score(gts, res)
    cider, cider_each = Cider().compute_score(gts, res)
    meteor, meteor_each = Meteor().compute_score(gts, res)

    lite_cmd = ["java", "-jar", "-Xmx2G", "meteor-1.5.jar", "-", "-", "-stdio", "-l", "en", "-norm",
                "-m", "exact stem", "-w", "1.0 1.0", "-p", "0.9 3.0 0.5 0.5"]
    proc = subprocess.Popen(lite_cmd, cwd=os.path.join(pcc_dir, "meteor"), stdin=subprocess.PIPE,
                            stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
    lite_each = []
    for i in range(len(instances)):
        proc.stdin.write(" ||| ".join(["SCORE"] + gts[i] + [res[i][0]]) + "\n")
        proc.stdin.flush()
        stats = proc.stdout.readline().strip()
        proc.stdin.write(f"EVAL ||| {stats}\n")
        proc.stdin.flush()
        # EVAL answers with two lines, the segment score and the aggregate.
        lite_each.append(float(proc.stdout.readline().strip()))
        proc.stdout.readline()
    proc.stdin.close()
    proc.wait()

    golden = {
        "instances": instances,
        "bleu": list(bleu),
        "rouge_l": float(rouge),
        "rouge_l_each": [float(x) for x in rouge_each],
        "cider": float(cider),
        "cider_each": [float(x) for x in cider_each],
        "meteor": float(meteor),
        "meteor_each": [float(x) for x in meteor_each],
        "meteor_exact_stem_each": lite_each,
    }
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(golden, f, indent=1)


if __name__ == "__main__":
    main(*sys.argv[1:])
