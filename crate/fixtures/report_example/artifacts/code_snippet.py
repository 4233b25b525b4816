fig, axes = plt.subplots(1, 2)
axes[0].set_title('Favorite Coffee Types by Gender')
axes[1].set_title('Brewing Methods by Gender')
