package calc

func Add(a, b int) int {
	return a + b
}

func Scale(v, factor int) int {
	return v * factor
}
