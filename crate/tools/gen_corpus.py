"""Generates the bundled traffic-report corpus used by tests and examples.

Deterministic: re-running reproduces crates/core/data/traffic_corpus.txt exactly.
Each output line is one multi-sentence document.
"""
import random

rng = random.Random(20240611)

roads = ["the ring road", "the northern bypass", "the harbor bridge", "the main avenue", "the airport link",
         "the river tunnel", "the eastern corridor", "the city center", "the industrial zone", "the southern motorway",
         "the old market street", "the university campus", "the central station", "the west interchange",
         "the coastal highway", "the mountain pass", "the freight terminal", "the hospital district"]
vehicles = ["car", "truck", "bus", "tram", "cyclist", "motorcycle", "van", "taxi", "ambulance", "delivery robot",
            "school bus", "fire engine", "police car", "trailer", "coach", "pedestrian", "scooter", "tractor"]
events = ["an accident", "road works", "a broken signal", "heavy rain", "dense fog", "a stalled vehicle",
          "a lane closure", "a public event", "a power failure", "black ice", "a fallen tree", "a burst pipe",
          "strong wind", "a protest march", "a sensor fault", "flooding", "a chemical spill", "a parade"]
actions = ["slow down", "change lanes", "merge carefully", "keep a safe distance", "use the hard shoulder",
           "follow the detour", "wait at the junction", "reduce speed", "switch on the headlights",
           "avoid sudden braking", "yield to emergency vehicles", "check the mirrors", "signal early",
           "stop at the line", "give way to buses", "turn right at the roundabout", "stay in the left lane"]
adjs = ["heavy", "light", "moderate", "slow", "steady", "congested", "fluid", "stop and go", "unusual",
        "normal", "busy", "quiet", "dangerous", "safe", "variable", "predictable", "sudden", "severe"]
times = ["this morning", "during the evening peak", "at noon", "after midnight", "on weekdays", "on weekends",
         "before sunrise", "during school hours", "at rush hour", "later today", "tomorrow", "since yesterday",
         "for the next hour", "until further notice", "over the holiday", "at night"]
agents = ["the control center", "the traffic manager", "the navigation system", "the road authority",
          "the city council", "the transport agency", "the dispatch team", "the signal controller",
          "the driver", "the operator", "the planning office", "the maintenance crew", "the analyst"]
verbs = ["reports", "expects", "recommends", "observes", "predicts", "confirms", "announces", "detects",
         "monitors", "estimates", "suggests", "records", "warns about", "measures", "reviews"]
nouns = ["travel time", "queue length", "average speed", "vehicle count", "signal timing", "lane occupancy",
         "parking demand", "emission level", "incident rate", "journey delay", "sensor data", "flow rate",
         "road capacity", "arrival time", "fuel use", "noise level", "waiting time", "passenger load"]
numbers = ["two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "twelve", "fifteen",
           "twenty", "thirty", "forty", "fifty", "sixty", "ninety", "a hundred"]
units = ["minutes", "percent", "kilometers", "vehicles", "meters", "seconds", "hours", "lanes", "stops"]
connect = ["Meanwhile,", "However,", "As a result,", "In addition,", "Therefore,", "Later,", "Overall,",
           "For now,", "Fortunately,", "Unfortunately,", "In short,", "Again,"]
terms = [".", ".", ".", ".", "!", "?"]


def c(xs):
    return rng.choice(xs)


def sentence():
    t = rng.randrange(12)
    if t == 0:
        s = f"{c(agents)} {c(verbs)} {c(adjs)} traffic on {c(roads)} {c(times)}"
    elif t == 1:
        s = f"because of {c(events)} near {c(roads)}, every {c(vehicles)} should {c(actions)}"
    elif t == 2:
        s = f"the {c(nouns)} on {c(roads)} rose by {c(numbers)} {c(units)} {c(times)}"
    elif t == 3:
        s = f"{c(connect)} {c(agents)} {c(verbs)} {c(events)} and asks each {c(vehicles)} to {c(actions)}"
    elif t == 4:
        s = f"a {c(vehicles)} stopped near {c(roads)} after {c(events)}, so the {c(nouns)} is {c(adjs)}"
    elif t == 5:
        s = f"drivers on {c(roads)} must {c(actions)} and {c(actions)} {c(times)}"
    elif t == 6:
        s = f"{c(agents)} {c(verbs)} that the {c(nouns)} will stay {c(adjs)} {c(times)}"
    elif t == 7:
        s = f"what will the {c(vehicles)} do next on {c(roads)}"
    elif t == 8:
        s = f"{c(connect)} the {c(nouns)} fell to {c(numbers)} {c(units)} near {c(roads)}"
    elif t == 9:
        s = f"the {c(vehicles)} will first {c(actions)}, then {c(actions)} and finally {c(actions)}"
    elif t == 10:
        s = f"{c(events)} on {c(roads)} caused {c(adjs)} conditions {c(times)}"
    else:
        s = f"please {c(actions)} when {c(agents)} {c(verbs)} {c(events)}"
    s = s[0].upper() + s[1:]
    term = "?" if t == 7 else c(terms)
    return s + term


lines = []
size = 0
while size < 50_000:
    doc = " ".join(sentence() for _ in range(rng.randrange(4, 11)))
    lines.append(doc)
    size += len(doc) + 1

with open("crates/core/data/traffic_corpus.txt", "w") as f:
    f.write("\n".join(lines) + "\n")
