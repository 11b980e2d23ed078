package maporder

type Metric struct {
	Region string
	Value  int
}

func Rollup(points map[string]int) []Metric {
	out := []Metric{}
	for region, v := range points {
		out = append(out, Metric{Region: region, Value: v})
	}
	return out
}
